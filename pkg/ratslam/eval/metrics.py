"""Trajectory accuracy: Hausdorff distance with optional rigid alignment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from ratslam.errors import EvaluationError
from ratslam.utils.kvfile import format_kv
from ratslam.utils.logging import get_logger


logger = get_logger("ratslam.eval")


def as_points(points: Any, name: str = "points") -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        raise EvaluationError(f"{name}: empty point set")
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise EvaluationError(f"{name}: expected (n, 2) points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"{name}: non-finite coordinate")
    return arr


def directed_hausdorff_bruteforce(a: Any, b: Any, chunk: int = 1024) -> float:
    """sup over ``a`` of the distance to the nearest point of ``b``, all pairs enumerated."""
    a = as_points(a, "a")
    b = as_points(b, "b")
    worst = 0.0
    for start in range(0, len(a), chunk):
        block = a[start:start + chunk]
        dx = block[:, None, 0] - b[None, :, 0]
        dy = block[:, None, 1] - b[None, :, 1]
        nearest = np.min(dx * dx + dy * dy, axis=1)
        worst = max(worst, float(np.max(nearest)))
    return math.sqrt(worst)


def hausdorff(a: Any, b: Any, accelerated: bool = True) -> float:
    """Symmetric Hausdorff distance; the two sets may differ in size."""
    a = as_points(a, "a")
    b = as_points(b, "b")
    if not accelerated:
        return max(directed_hausdorff_bruteforce(a, b), directed_hausdorff_bruteforce(b, a))
    return float(max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0]))


@dataclass(frozen=True)
class RigidTransform:
    """``p -> R(theta) p + (tx, ty)``"""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def rotation_deg(self) -> float:
        return math.degrees(self.theta)

    def apply(self, points: Any) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return pts @ self.rotation.T + np.array([self.tx, self.ty])


def align(est: Any, gt: Any, pairs: Optional[Sequence[Tuple[int, int]]] = None) -> RigidTransform:
    """Least-squares rotation and translation (no scale) taking ``est`` onto ``gt``.

    ``pairs`` lists ``(est_index, gt_index)`` correspondences; without it the
    two arrays are paired row by row.
    """
    est = as_points(est, "est")
    gt = as_points(gt, "gt")
    if pairs is None:
        if len(est) != len(gt):
            raise EvaluationError(f"cannot pair {len(est)} estimate points with {len(gt)} ground-truth points")
        x, y = est, gt
    else:
        idx = np.asarray(pairs, dtype=int).reshape(-1, 2)
        x, y = est[idx[:, 0]], gt[idx[:, 1]]
    if len(x) < 2:
        raise EvaluationError(f"alignment needs at least 2 correspondences, got {len(x)}")

    mx, my = x.mean(axis=0), y.mean(axis=0)
    x0, y0 = x - mx, y - my
    if not np.any(x0) or not np.any(y0):
        raise EvaluationError("degenerate alignment: all points coincide")
    # 2-D Kabsch in closed form
    cross = float(np.sum(x0[:, 0] * y0[:, 1] - x0[:, 1] * y0[:, 0]))
    dot = float(np.sum(x0[:, 0] * y0[:, 0] + x0[:, 1] * y0[:, 1]))
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    tx = float(my[0] - (c * mx[0] - s * mx[1]))
    ty = float(my[1] - (s * mx[0] + c * mx[1]))
    return RigidTransform(theta, tx, ty)


def rms(a: Any, b: Any) -> float:
    a = as_points(a, "a")
    b = as_points(b, "b")
    if a.shape != b.shape:
        raise EvaluationError(f"rms needs paired points, got {a.shape} and {b.shape}")
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


@dataclass
class MetricReport:
    """Hausdorff results for one estimate (and optionally its dead-reckoning baseline).

    ``d_hausdorff`` is the headline number: the aligned value when the report
    was built with ``aligned=True``, the raw value otherwise. Both are always
    filled in so a reader can compare them.
    """

    d_hausdorff: float
    d_hausdorff_raw: float
    d_hausdorff_aligned: float
    aligned: bool
    n_est: int
    n_gt: int
    n_pairs: int
    transform: RigidTransform
    rms_aligned: float
    dead_reckoning: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "d_hausdorff": self.d_hausdorff,
            "d_hausdorff_raw": self.d_hausdorff_raw,
            "d_hausdorff_aligned": self.d_hausdorff_aligned,
            "aligned": self.aligned,
            "n_est": self.n_est,
            "n_gt": self.n_gt,
            "n_pairs": self.n_pairs,
            "rotation_deg": self.transform.rotation_deg,
            "tx": self.transform.tx,
            "ty": self.transform.ty,
            "rms_aligned": self.rms_aligned,
        }
        for key, value in self.dead_reckoning.items():
            out[f"dead_reckoning_{key}"] = value
        return out

    def to_text(self) -> str:
        return format_kv(self.as_dict().items(), header="trajectory evaluation")

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def _hausdorff_pair(est: np.ndarray, gt: np.ndarray, pairs: List[Tuple[int, int]]) -> Tuple[float, float, RigidTransform, float]:
    transform = align(est, gt, pairs)
    moved = transform.apply(est)
    idx = np.asarray(pairs, dtype=int).reshape(-1, 2)
    return (
        hausdorff(est, gt),
        hausdorff(moved, gt),
        transform,
        rms(moved[idx[:, 0]], gt[idx[:, 1]]),
    )


def evaluate(
    est: Any,
    gt: Any,
    pairs: Sequence[Tuple[int, int]],
    dead_reckoning: Optional[Any] = None,
    use_alignment: bool = False,
) -> MetricReport:
    """Compare an estimated track with ground truth.

    ``pairs`` joins estimate rows to ground-truth rows by timestamp and drives
    the alignment. A dead-reckoning track, when given, shares the estimate's
    row indexing and gets its own alignment.
    """
    est = as_points(est, "estimate")
    gt = as_points(gt, "ground truth")
    pairs = [(int(i), int(j)) for i, j in pairs]
    raw, aligned, transform, residual = _hausdorff_pair(est, gt, pairs)
    baseline: Dict[str, float] = {}
    if dead_reckoning is not None:
        dr = as_points(dead_reckoning, "dead reckoning")
        dr_raw, dr_aligned, _, _ = _hausdorff_pair(dr, gt, pairs)
        baseline = {
            "d_hausdorff": dr_aligned if use_alignment else dr_raw,
            "d_hausdorff_raw": dr_raw,
            "d_hausdorff_aligned": dr_aligned,
        }
    return MetricReport(
        d_hausdorff=aligned if use_alignment else raw,
        d_hausdorff_raw=raw,
        d_hausdorff_aligned=aligned,
        aligned=use_alignment,
        n_est=len(est),
        n_gt=len(gt),
        n_pairs=len(pairs),
        transform=transform,
        rms_aligned=residual,
        dead_reckoning=baseline,
    )


@dataclass
class MetricReport:
    """Hausdorff results for one estimate (and optionally its dead-reckoning baseline).

    ``d_hausdorff`` is the headline number: the aligned value when the report
    was built with ``aligned=True``, the raw value otherwise. The aligned
    fields are ``None`` when no rigid alignment exists for the correspondences
    (fewer than two, or all estimate points coincide) and are then left out
    of the text and JSON forms.
    """

    d_hausdorff: float
    d_hausdorff_raw: float
    d_hausdorff_aligned: Optional[float]
    aligned: bool
    n_est: int
    n_gt: int
    n_pairs: int
    transform: Optional[RigidTransform]
    rms_aligned: Optional[float]
    dead_reckoning: Dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "d_hausdorff": self.d_hausdorff,
            "d_hausdorff_raw": self.d_hausdorff_raw,
            "aligned": self.aligned,
            "n_est": self.n_est,
            "n_gt": self.n_gt,
            "n_pairs": self.n_pairs,
        }
        if self.transform is not None:
            out["d_hausdorff_aligned"] = self.d_hausdorff_aligned
            out["rotation_deg"] = self.transform.rotation_deg
            out["tx"] = self.transform.tx
            out["ty"] = self.transform.ty
            out["rms_aligned"] = self.rms_aligned
        for key, value in self.dead_reckoning.items():
            out[f"dead_reckoning_{key}"] = value
        return out

    def to_text(self) -> str:
        return format_kv(self.as_dict().items(), header="trajectory evaluation")

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class _Scores:
    raw: float
    aligned: Optional[float] = None
    transform: Optional[RigidTransform] = None
    rms: Optional[float] = None


def _score(est: np.ndarray, gt: np.ndarray, pairs: List[Tuple[int, int]], required: bool) -> _Scores:
    raw = hausdorff(est, gt)
    try:
        transform = align(est, gt, pairs)
    except EvaluationError as exc:
        if required:
            raise
        logger.debug("no rigid alignment: %s", exc)
        return _Scores(raw)
    moved = transform.apply(est)
    idx = np.asarray(pairs, dtype=int).reshape(-1, 2)
    return _Scores(raw, hausdorff(moved, gt), transform, rms(moved[idx[:, 0]], gt[idx[:, 1]]))


def evaluate(
    est: Any,
    gt: Any,
    pairs: Sequence[Tuple[int, int]],
    dead_reckoning: Optional[Any] = None,
    use_alignment: bool = False,
) -> MetricReport:
    """Compare an estimated track with ground truth.

    ``pairs`` joins estimate rows to ground-truth rows by timestamp and drives
    the alignment. A dead-reckoning track, when given, shares the estimate's
    row indexing and gets its own alignment. The raw distance needs no
    correspondences; with ``use_alignment`` an impossible alignment raises
    ``EvaluationError``.
    """
    est = as_points(est, "estimate")
    gt = as_points(gt, "ground truth")
    pairs = [(int(i), int(j)) for i, j in pairs]
    scores = _score(est, gt, pairs, required=use_alignment)
    baseline: Dict[str, float] = {}
    if dead_reckoning is not None:
        dr = _score(as_points(dead_reckoning, "dead reckoning"), gt, pairs, required=use_alignment)
        baseline = {"d_hausdorff": dr.aligned if use_alignment else dr.raw, "d_hausdorff_raw": dr.raw}
        if dr.aligned is not None:
            baseline["d_hausdorff_aligned"] = dr.aligned
    return MetricReport(
        d_hausdorff=scores.aligned if use_alignment else scores.raw,
        d_hausdorff_raw=scores.raw,
        d_hausdorff_aligned=scores.aligned,
        aligned=use_alignment,
        n_est=len(est),
        n_gt=len(gt),
        n_pairs=len(pairs),
        transform=scores.transform,
        rms_aligned=scores.rms,
        dead_reckoning=baseline,
    )
