"""Writers for everything ``run`` leaves under its output directory."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ratslam.core.experience_map import ExperienceMap
from ratslam.core.pipeline import StepResult
from ratslam.errors import DatasetError


PathLike = Union[str, Path]


def _num(v: float) -> str:
    return repr(float(v))


def write_text(path: PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def trajectory_csv(exp_map: ExperienceMap) -> str:
    rows = [(str(i), _num(p.x), _num(p.y), _num(p.theta)) for i, p in exp_map.trajectory()]
    return _csv_text(("id", "x", "y", "theta"), rows)


def dead_reckoning_csv(results: Sequence[StepResult]) -> str:
    rows = [
        (str(r.step), _num(r.timestamp), _num(r.dead_reckoning.x), _num(r.dead_reckoning.y), _num(r.dead_reckoning.theta))
        for r in results
    ]
    return _csv_text(("step", "timestamp", "x", "y", "theta"), rows)


def estimate_track_csv(results: Sequence[StepResult], track: np.ndarray) -> str:
    rows = [(str(r.step), _num(r.timestamp), _num(x), _num(y)) for r, (x, y) in zip(results, track)]
    return _csv_text(("step", "timestamp", "x", "y"), rows)


def read_track_csv(path: PathLike, columns: Sequence[str] = ("x", "y")) -> Tuple[np.ndarray, np.ndarray]:
    """Read a track CSV written by this module; returns ``(timestamps, points)``."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    try:
        times = np.array([float(r["timestamp"]) for r in rows], dtype=float)
        points = np.array([[float(r[c]) for c in columns] for r in rows], dtype=float).reshape(-1, len(columns))
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{path}: malformed track file ({e})") from e
    return times, points


def summary_json(summary: Dict[str, Any]) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def write_volume(path: PathLike, volume: np.ndarray) -> Path:
    """``uint32`` dims (x, y, theta) then the cells as little-endian float64, C order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.asarray(volume.shape, dtype="<u4")
    with path.open("wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(volume, dtype="<f8").tobytes())
    return path


def read_volume(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    dims = tuple(int(d) for d in np.frombuffer(raw[:12], dtype="<u4"))
    return np.frombuffer(raw[12:], dtype="<f8").reshape(dims).copy()


# --- SVG overlay ---------------------------------------------------------

SVG_SIZE = 800
SVG_MARGIN = 20


def _polyline(points: np.ndarray, to_px, colour: str, width: float) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (to_px(p) for p in points))
    return f'<polyline fill="none" stroke="{colour}" stroke-width="{width}" points="{coords}"/>'


def render_svg(
    estimate: np.ndarray,
    nodes: Optional[np.ndarray] = None,
    ground_truth: Optional[np.ndarray] = None,
) -> str:
    """Estimate (blue) over ground truth (grey) with experience nodes as dots.

    World y points up; the picture keeps a common scale on both axes. The
    ground-truth polyline is left out entirely when there is none.
    """
    layers: List[np.ndarray] = [np.asarray(estimate, dtype=float).reshape(-1, 2)]
    if nodes is not None:
        layers.append(np.asarray(nodes, dtype=float).reshape(-1, 2))
    if ground_truth is not None:
        layers.append(np.asarray(ground_truth, dtype=float).reshape(-1, 2))
    everything = np.vstack(layers)
    if len(everything) == 0:
        everything = np.zeros((1, 2))
    lo = everything.min(axis=0)
    hi = everything.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    scale = (SVG_SIZE - 2 * SVG_MARGIN) / span

    def to_px(p):
        return SVG_MARGIN + (p[0] - lo[0]) * scale, SVG_SIZE - SVG_MARGIN - (p[1] - lo[1]) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
    ]
    if ground_truth is not None and len(layers[-1]):
        parts.append('<g id="ground_truth">' + _polyline(layers[-1], to_px, "#888888", 2) + "</g>")
    if len(layers[0]):
        parts.append('<g id="estimate">' + _polyline(layers[0], to_px, "#1f5fbf", 1.5) + "</g>")
    if nodes is not None:
        dots = "".join(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2"/>' for x, y in (to_px(p) for p in layers[1]))
        parts.append(f'<g id="experiences" fill="#c03020">{dots}</g>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
