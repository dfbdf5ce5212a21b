"""Recorded dataset loading and stream synchronisation.

A dataset is a directory::

    dataset.toml        key = value manifest (see DatasetManifest)
    frames.csv          timestamp,filename
    odometry.csv        timestamp,delta_s,delta_theta   or   timestamp,heading,speed
    groundtruth.csv     timestamp,lat,lon               or   timestamp,x,y   (optional)
    images/             8-bit grayscale PGM or PNG
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ratslam.core.experience_map import wrap_angle, wrap_angles
from ratslam.core.local_view import Frame
from ratslam.errors import ConfigError, DatasetError
from ratslam.utils.kvfile import read_kv_file
from ratslam.utils.logging import get_logger


logger = get_logger("ratslam.ingest")

MANIFEST_NAME = "dataset.toml"
EARTH_RADIUS = 6378137.0


class OdometryKind(str, Enum):
    DELTA = "delta"
    HEADING = "heading"


class GroundTruthKind(str, Enum):
    LATLON = "latlon"
    XY = "xy"


class DatasetManifest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    frames: str = Field("frames.csv", description="Frame index CSV")
    odometry: str = Field("odometry.csv", description="Odometry CSV")
    groundtruth: str = Field("", description="Ground-truth CSV, empty when absent")
    image_dir: str = Field("images", description="Directory holding the frame images")
    image_format: str = Field("pgm", pattern="^(pgm|png)$", description="pgm or png")
    odometry_kind: OdometryKind = Field(OdometryKind.DELTA, description="delta rows or absolute heading + speed rows")
    groundtruth_kind: GroundTruthKind = Field(GroundTruthKind.XY, description="latlon fixes or local metres")


@dataclass
class DatasetStream:
    root: Path
    manifest: DatasetManifest
    frame_times: np.ndarray
    frame_files: List[str]
    odometry: np.ndarray
    ground_truth: Optional[np.ndarray] = None
    resize: Optional[Tuple[int, int]] = None

    def __len__(self) -> int:
        return len(self.frame_files)

    def frame_path(self, index: int) -> Path:
        return self.root / self.manifest.image_dir / self.frame_files[index]

    def load_frame(self, index: int) -> Frame:
        return read_frame(self.frame_path(index), self.resize)

    def ground_truth_xy(self) -> Optional[np.ndarray]:
        """Ground truth as ``(t, x, y)`` rows in metres; fixes are projected around the first one."""
        if self.ground_truth is None:
            return None
        if self.manifest.groundtruth_kind is GroundTruthKind.XY:
            return self.ground_truth.copy()
        origin = (float(self.ground_truth[0, 1]), float(self.ground_truth[0, 2]))
        out = np.empty_like(self.ground_truth)
        out[:, 0] = self.ground_truth[:, 0]
        for i, (_, lat, lon) in enumerate(self.ground_truth):
            out[i, 1:] = gps_to_local(float(lat), float(lon), origin)
        return out

    def odometry_deltas(self) -> np.ndarray:
        """Odometry as ``(t, delta_s, delta_theta)`` rows whatever the recorded kind."""
        if self.manifest.odometry_kind is OdometryKind.DELTA:
            return self.odometry.copy()
        t, heading, speed = self.odometry[:, 0], self.odometry[:, 1], self.odometry[:, 2]
        out = np.zeros_like(self.odometry)
        out[:, 0] = t
        out[1:, 1] = speed[:-1] * np.diff(t)
        out[1:, 2] = wrap_angles(np.diff(heading))
        return out


@dataclass(frozen=True)
class SyncedStep:
    index: int
    timestamp: float
    delta_s: float
    delta_theta: float
    ground_truth: Optional[Tuple[float, float]] = None


def read_frame(path: Path, resize: Optional[Tuple[int, int]] = None) -> Frame:
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            if resize is not None and gray.size != resize:
                gray = gray.resize(resize, Image.Resampling.BILINEAR)
            pixels = np.asarray(gray, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as e:
        raise DatasetError(f"unreadable image {path}: {e}") from e
    return Frame.from_uint8(pixels)


def _read_csv(path: Path, columns: Sequence[str]) -> List[List[str]]:
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    if not rows or [c.strip() for c in rows[0]] != list(columns):
        raise DatasetError(f"{path}: expected header '{','.join(columns)}'")
    body = rows[1:]
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(columns):
            raise DatasetError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(row)}")
    return body


def _numeric(path: Path, rows: List[List[str]]) -> np.ndarray:
    try:
        data = np.array([[float(v) for v in row] for row in rows], dtype=float)
    except ValueError as e:
        raise DatasetError(f"{path}: non-numeric value ({e})") from e
    data = data.reshape(-1, 3)
    if not np.all(np.isfinite(data)):
        raise DatasetError(f"{path}: non-finite value")
    return data


def _check_increasing(path: Path, times: np.ndarray) -> None:
    bad = np.nonzero(np.diff(times) <= 0)[0]
    if len(bad):
        i = int(bad[0])
        raise DatasetError(
            f"{path}: timestamps must be strictly increasing (row {i + 2}: {times[i]!r}, row {i + 3}: {times[i + 1]!r})"
        )


def load_manifest(root: Path) -> DatasetManifest:
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise DatasetError(f"missing manifest {path}")
    try:
        return DatasetManifest.model_validate(read_kv_file(path))
    except ConfigError as e:
        raise DatasetError(str(e)) from e
    except ValidationError as e:
        raise DatasetError(f"{path}: {e.errors()[0]['loc'][0]}: {e.errors()[0]['msg']}") from e


def load_dataset(root: Union[str, Path], resize: Optional[Tuple[int, int]] = None) -> DatasetStream:
    """Read and validate a dataset directory. Images are only checked for existence here."""
    root = Path(root)
    manifest = load_manifest(root)

    frames_path = root / manifest.frames
    frame_rows = _read_csv(frames_path, ("timestamp", "filename"))
    if not frame_rows:
        raise DatasetError(f"{frames_path}: no frames")
    try:
        frame_times = np.array([float(r[0]) for r in frame_rows])
    except ValueError as e:
        raise DatasetError(f"{frames_path}: non-numeric timestamp ({e})") from e
    _check_increasing(frames_path, frame_times)
    frame_files = [r[1].strip() for r in frame_rows]
    image_dir = root / manifest.image_dir
    for name in frame_files:
        if not (image_dir / name).is_file():
            raise DatasetError(f"unreadable image {image_dir / name}: file not found")

    odo_path = root / manifest.odometry
    odo_columns = (
        ("timestamp", "delta_s", "delta_theta")
        if manifest.odometry_kind is OdometryKind.DELTA
        else ("timestamp", "heading", "speed")
    )
    odometry = _numeric(odo_path, _read_csv(odo_path, odo_columns))
    if len(odometry) == 0:
        raise DatasetError(f"{odo_path}: no odometry rows")
    _check_increasing(odo_path, odometry[:, 0])

    ground_truth = None
    if manifest.groundtruth:
        gt_path = root / manifest.groundtruth
        gt_columns = (
            ("timestamp", "lat", "lon") if manifest.groundtruth_kind is GroundTruthKind.LATLON else ("timestamp", "x", "y")
        )
        ground_truth = _numeric(gt_path, _read_csv(gt_path, gt_columns))
        _check_increasing(gt_path, ground_truth[:, 0])
        if len(ground_truth) == 0:
            ground_truth = None
    if ground_truth is None:
        logger.warning("dataset %s has no ground truth", root)

    logger.info("loaded %s: %d frames, %d odometry rows", root, len(frame_files), len(odometry))
    return DatasetStream(root, manifest, frame_times, frame_files, odometry, ground_truth, resize)


def nearest_index(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t))
    if i == 0:
        return 0
    if i == len(times):
        return len(times) - 1
    return i if times[i] - t < t - times[i - 1] else i - 1


def synchronize(stream: DatasetStream, gt_join_window: float = 0.75) -> List[SyncedStep]:
    """One step per frame.

    Step ``k`` integrates the odometry rows with ``t`` in ``(f[k-1], f[k]]``;
    rows after the last frame are folded into the last step. Ground truth is
    the nearest fix within ``gt_join_window`` seconds.
    """
    n = len(stream)
    deltas = stream.odometry_deltas()
    slot = np.searchsorted(stream.frame_times, deltas[:, 0], side="left")
    trailing = int(np.sum(slot >= n))
    if trailing:
        logger.warning("%d odometry rows after the last frame folded into the last step", trailing)
        slot = np.minimum(slot, n - 1)
    ds = np.zeros(n)
    dth = np.zeros(n)
    np.add.at(ds, slot, deltas[:, 1])
    np.add.at(dth, slot, deltas[:, 2])
    counts = np.bincount(slot, minlength=n)
    gaps = np.nonzero(counts[1:] == 0)[0] + 1
    if len(gaps):
        logger.warning(
            "%d steps without odometry (first at frame %d, t=%.3f); using zero motion",
            len(gaps), int(gaps[0]), float(stream.frame_times[gaps[0]]),
        )

    gt = stream.ground_truth_xy()
    steps: List[SyncedStep] = []
    for k in range(n):
        t = float(stream.frame_times[k])
        point = None
        if gt is not None:
            j = nearest_index(gt[:, 0], t)
            if abs(gt[j, 0] - t) <= gt_join_window:
                point = (float(gt[j, 1]), float(gt[j, 2]))
        steps.append(SyncedStep(k, t, float(ds[k]), wrap_angle(float(dth[k])), point))
    return steps


def _check_latlon(lat: float, lon: float) -> None:
    if not (abs(lat) <= 90.0 and abs(lon) <= 180.0):
        raise DatasetError(f"coordinate out of range: lat={lat}, lon={lon}")


def gps_to_local(lat: float, lon: float, origin: Tuple[float, float]) -> Tuple[float, float]:
    """Equirectangular projection to metres east/north of ``origin``."""
    _check_latlon(lat, lon)
    _check_latlon(*origin)
    lat0, lon0 = origin
    x = EARTH_RADIUS * math.cos(math.radians(lat0)) * math.radians(lon - lon0)
    y = EARTH_RADIUS * math.radians(lat - lat0)
    return x, y


def local_to_gps(x: float, y: float, origin: Tuple[float, float]) -> Tuple[float, float]:
    _check_latlon(*origin)
    lat0, lon0 = origin
    lat = lat0 + math.degrees(y / EARTH_RADIUS)
    lon = lon0 + math.degrees(x / (EARTH_RADIUS * math.cos(math.radians(lat0))))
    return lat, lon
