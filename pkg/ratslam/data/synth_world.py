"""Deterministic synthetic datasets with known loop closures and controllable odometry drift.

The vehicle follows a polyline at constant speed. Every frame shows the
procedural pattern of the nearest scene anchor plus seeded pixel noise, so
revisiting a place reproduces its images. Odometry is the true motion with
a heading bias and Gaussian noise added.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ratslam.core.experience_map import wrap_angle
from ratslam.data.ingest import MANIFEST_NAME, GroundTruthKind, OdometryKind, local_to_gps
from ratslam.errors import ConfigError, DatasetError
from ratslam.utils.kvfile import format_kv, parse_assignment, parse_kv_text, read_kv_file
from ratslam.utils.logging import get_logger


logger = get_logger("ratslam.synth_world")

Point = Tuple[float, float]


def _parse_points(value, what: str) -> List[Point]:
    if isinstance(value, str):
        points = []
        for item in value.split(";"):
            item = item.strip()
            if not item:
                continue
            parts = item.split(":")
            if len(parts) != 2:
                raise ValueError(f"{what} entries must look like x:y, got {item!r}")
            points.append((float(parts[0]), float(parts[1])))
        return points
    return [tuple(p) for p in value]


def _format_points(points: Iterable[Point]) -> str:
    return ";".join(f"{float(x)!r}:{float(y)!r}" for x, y in points)


class ScenarioSpec(BaseModel):
    """A synthetic run. Defaults describe a 40 m square driven twice."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    waypoints: List[Point] = Field(
        default_factory=lambda: [(0.0, 0.0), (40.0, 0.0), (40.0, 40.0), (0.0, 40.0), (0.0, 0.0)],
        description="Polyline as x:y;x:y;... in metres; must be closed to drive more than one lap",
    )
    laps: int = Field(2, ge=1, description="Times the path is driven")
    speed: float = Field(1.0, gt=0.0, description="m/s")
    rate: float = Field(1.0, gt=0.0, description="Frames per second")
    n_scenes: int = Field(64, ge=1, description="Scene anchors spread evenly along one lap")
    heading_bias: float = Field(0.002, description="Odometry heading bias, rad/s")
    noise_s: float = Field(0.01, ge=0.0, description="Std dev of distance noise per step, m")
    noise_theta: float = Field(0.001, ge=0.0, description="Std dev of heading noise per step, rad")
    pixel_noise: float = Field(0.01, ge=0.0, description="Std dev of per-frame pixel noise, intensity units")
    seed: int = Field(0, ge=0, description="Seeds odometry and pixel noise; scene patterns do not depend on it")
    image_width: int = Field(320, ge=1)
    image_height: int = Field(240, ge=1)
    block_size: int = Field(4, ge=1, description="Side of one pattern block in pixels")
    odometry_kind: OdometryKind = Field(OdometryKind.DELTA, description="delta or heading rows")
    gps_origin: Optional[Point] = Field(None, description="lat:lon; when set ground truth is written as fixes")
    image_format: str = Field("pgm", pattern="^(pgm|png)$")

    @field_validator("waypoints", mode="before")
    @classmethod
    def _waypoints(cls, v):
        return _parse_points(v, "waypoints")

    @field_validator("gps_origin", mode="before")
    @classmethod
    def _origin(cls, v):
        if v is None or (isinstance(v, str) and not v.strip()):
            return None
        points = _parse_points(v, "gps_origin")
        if len(points) != 1:
            raise ValueError("gps_origin must be a single lat:lon pair")
        return points[0]

    @model_validator(mode="after")
    def _check(self) -> "ScenarioSpec":
        if len(self.waypoints) < 2:
            raise ValueError("need at least 2 waypoints")
        if self.laps > 1 and self.waypoints[0] != self.waypoints[-1]:
            raise ValueError("more than one lap needs a closed path (first waypoint == last waypoint)")
        if lap_length(self.waypoints) <= 0:
            raise ValueError("path has zero length")
        return self


def load_scenario(path: Union[str, Path], overrides: Iterable[str] = ()) -> ScenarioSpec:
    values = read_kv_file(path)
    for item in overrides:
        key, value = parse_assignment(item)
        values[key] = value
    return _validate(values, str(path))


def parse_scenario(text: str) -> ScenarioSpec:
    return _validate(parse_kv_text(text), "<string>")


def _validate(values: Dict[str, str], source: str) -> ScenarioSpec:
    try:
        return ScenarioSpec.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'scenario'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"{source}: {problems}") from e


def dump_scenario(spec: ScenarioSpec) -> str:
    items = []
    for key, value in spec.model_dump().items():
        if key == "waypoints":
            value = _format_points(value)
        elif key == "gps_origin":
            value = "" if value is None else _format_points([value])
        elif key == "odometry_kind":
            value = value.value
        items.append((key, value))
    return format_kv(items, header="synthetic scenario")


# -- geometry ---------------------------------------------------------------


def lap_length(waypoints: List[Point]) -> float:
    w = np.asarray(waypoints, dtype=float)
    return float(np.sum(np.hypot(*np.diff(w, axis=0).T)))


def point_at(waypoints: List[Point], arc: float) -> Point:
    """Position at ``arc`` metres along the polyline, wrapping once per lap."""
    w = np.asarray(waypoints, dtype=float)
    seg = np.hypot(*np.diff(w, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    u = arc % cum[-1] if arc != cum[-1] else cum[-1]
    i = min(int(np.searchsorted(cum, u, side="right")) - 1, len(seg) - 1)
    while seg[i] == 0.0 and i > 0:
        i -= 1
    f = (u - cum[i]) / seg[i] if seg[i] > 0 else 0.0
    return (float(w[i, 0] + f * (w[i + 1, 0] - w[i, 0])), float(w[i, 1] + f * (w[i + 1, 1] - w[i, 1])))


def sample_path(spec: ScenarioSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Frame times and true poses ``(x, y, theta)``.

    Theta is the direction of the next chord, so moving ``delta_s`` along the
    current heading and then turning lands exactly on the next sample.
    """
    step = spec.speed / spec.rate
    total = spec.laps * lap_length(spec.waypoints)
    n = int(math.floor(total / step + 1e-9))
    xy = np.array([point_at(spec.waypoints, k * step) for k in range(n + 1)])
    chords = np.diff(xy, axis=0)
    theta = np.empty(n + 1)
    if n:
        theta[:n] = np.arctan2(chords[:, 1], chords[:, 0])
        theta[n] = theta[n - 1]
    else:
        theta[0] = 0.0
    times = np.arange(n + 1) / spec.rate
    return times, np.column_stack([xy, theta])


def true_odometry(poses: np.ndarray) -> np.ndarray:
    """``(delta_s, delta_theta)`` moving from pose ``k-1`` to pose ``k``, for ``k >= 1``."""
    ds = np.hypot(*np.diff(poses[:, :2], axis=0).T)
    dth = np.array([wrap_angle(float(d)) for d in np.diff(poses[:, 2])])
    return np.column_stack([ds, dth]).reshape(-1, 2)


def measured_odometry(spec: ScenarioSpec, poses: np.ndarray) -> np.ndarray:
    truth = true_odometry(poses)
    rng = np.random.default_rng([spec.seed, 0])
    n = len(truth)
    ds = truth[:, 0] + rng.normal(0.0, spec.noise_s, size=n)
    dth = truth[:, 1] + spec.heading_bias / spec.rate + rng.normal(0.0, spec.noise_theta, size=n)
    return np.column_stack([ds, dth])


def scene_anchors(spec: ScenarioSpec) -> np.ndarray:
    length = lap_length(spec.waypoints)
    return np.array([point_at(spec.waypoints, i * length / spec.n_scenes) for i in range(spec.n_scenes)])


def nearest_scene(anchors: np.ndarray, x: float, y: float) -> int:
    d2 = (anchors[:, 0] - x) ** 2 + (anchors[:, 1] - y) ** 2
    return int(np.argmin(d2))


def scene_pattern(scene: int, spec: ScenarioSpec) -> np.ndarray:
    rng = np.random.default_rng([2, scene])
    rows = -(-spec.image_height // spec.block_size)
    cols = -(-spec.image_width // spec.block_size)
    blocks = rng.uniform(0.1, 0.9, size=(rows, cols))
    full = np.repeat(np.repeat(blocks, spec.block_size, axis=0), spec.block_size, axis=1)
    return full[: spec.image_height, : spec.image_width]


def render_frame(pattern: np.ndarray, spec: ScenarioSpec, index: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 1, index])
    noisy = pattern + rng.normal(0.0, spec.pixel_noise, size=pattern.shape)
    return np.round(np.clip(noisy, 0.0, 1.0) * 255.0).astype(np.uint8)


# -- writing ----------------------------------------------------------------


def _num(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Iterable[str]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def generate(spec: ScenarioSpec, out: Union[str, Path]) -> Path:
    """Write a dataset in the ingest format under ``out`` and return the directory."""
    out = Path(out)
    image_dir = out / "images"
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create {image_dir}: {e}") from e

    times, poses = sample_path(spec)
    odometry = measured_odometry(spec, poses)
    anchors = scene_anchors(spec)
    patterns: Dict[int, np.ndarray] = {}

    frame_rows = []
    for k, (x, y, _) in enumerate(poses):
        scene = nearest_scene(anchors, float(x), float(y))
        if scene not in patterns:
            patterns[scene] = scene_pattern(scene, spec)
        name = f"frame_{k:05d}.{spec.image_format}"
        try:
            Image.fromarray(render_frame(patterns[scene], spec, k)).save(image_dir / name)
        except OSError as e:
            raise DatasetError(f"cannot write {image_dir / name}: {e}") from e
        frame_rows.append((_num(times[k]), name))
    _write_csv(out / "frames.csv", ("timestamp", "filename"), frame_rows)

    if spec.odometry_kind is OdometryKind.DELTA:
        _write_csv(
            out / "odometry.csv",
            ("timestamp", "delta_s", "delta_theta"),
            ((_num(times[k + 1]), _num(ds), _num(dth)) for k, (ds, dth) in enumerate(odometry)),
        )
    else:
        heading = poses[0, 2] + np.concatenate([[0.0], np.cumsum(odometry[:, 1])])
        speed = np.concatenate([odometry[:, 0] * spec.rate, [0.0]])
        _write_csv(
            out / "odometry.csv",
            ("timestamp", "heading", "speed"),
            ((_num(t), _num(wrap_angle(float(h))), _num(v)) for t, h, v in zip(times, heading, speed)),
        )

    if spec.gps_origin is None:
        gt_kind = GroundTruthKind.XY
        gt_rows = ((_num(t), _num(x), _num(y)) for t, (x, y, _) in zip(times, poses))
        _write_csv(out / "groundtruth.csv", ("timestamp", "x", "y"), gt_rows)
    else:
        gt_kind = GroundTruthKind.LATLON
        fixes = [local_to_gps(float(x), float(y), spec.gps_origin) for x, y, _ in poses]
        _write_csv(out / "groundtruth.csv", ("timestamp", "lat", "lon"), ((_num(t), _num(a), _num(b)) for t, (a, b) in zip(times, fixes)))

    manifest = [
        ("frames", "frames.csv"),
        ("odometry", "odometry.csv"),
        ("groundtruth", "groundtruth.csv"),
        ("image_dir", "images"),
        ("image_format", spec.image_format),
        ("odometry_kind", spec.odometry_kind.value),
        ("groundtruth_kind", gt_kind.value),
    ]
    (out / MANIFEST_NAME).write_text(format_kv(manifest, header="generated by ratslam synth"), encoding="utf-8")
    (out / "scenario.txt").write_text(dump_scenario(spec), encoding="utf-8")
    logger.info("synthetic dataset %s: %d frames, %d scenes in use", out, len(poses), len(patterns))
    return out
