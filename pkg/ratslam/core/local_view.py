"""Local view cells: image templates, shift-searched comparison and saturation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from ratslam.app.config import RunConfig
from ratslam.core.pose_cells import PackedPose
from ratslam.errors import ConfigError
from ratslam.utils.logging import get_logger


logger = get_logger("ratslam.local_view")

_VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class Frame:
    """Grayscale image, intensities in [0, 1], shape ``(height, width)``."""

    intensities: np.ndarray

    def __post_init__(self):
        if self.intensities.ndim != 2:
            raise ValueError(f"frame must be 2-D, got shape {self.intensities.shape}")
        if self.intensities.size and (self.intensities.min() < 0.0 or self.intensities.max() > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return int(self.intensities.shape[0])

    @property
    def width(self) -> int:
        return int(self.intensities.shape[1])

    @classmethod
    def from_uint8(cls, pixels: np.ndarray) -> "Frame":
        return cls(np.asarray(pixels, dtype=np.float64) / 255.0)


def _block_mean(a: np.ndarray, rows: int, cols: int) -> np.ndarray:
    h, w = a.shape
    r_edges = (np.arange(rows) * h) // rows
    c_edges = (np.arange(cols) * w) // cols
    sums = np.add.reduceat(np.add.reduceat(a, r_edges, axis=0), c_edges, axis=1)
    r_counts = np.diff(np.append(r_edges, h))
    c_counts = np.diff(np.append(c_edges, w))
    return sums / np.outer(r_counts, c_counts)


def _patch_normalise(v: np.ndarray, radius: int, panoramic: bool) -> np.ndarray:
    size = 2 * radius + 1
    mode = ("reflect", "wrap") if panoramic else "reflect"
    mean = ndimage.uniform_filter(v, size=size, mode=mode)
    var = ndimage.uniform_filter(v * v, size=size, mode=mode) - mean * mean
    z = (v - mean) / np.sqrt(np.maximum(var, _VARIANCE_FLOOR))
    return np.clip(0.5 + z / 6.0, 0.0, 1.0)


def preprocess(frame: Frame, cfg: RunConfig) -> np.ndarray:
    """Crop, block-average to template size, then the optional normalisations.

    Returns a ``(template_y_size, template_x_size)`` array.
    """
    if cfg.image_crop_x_max > frame.width or cfg.image_crop_y_max > frame.height:
        raise ConfigError(
            f"crop [{cfg.image_crop_x_min},{cfg.image_crop_x_max})x[{cfg.image_crop_y_min},{cfg.image_crop_y_max}) "
            f"lies outside a {frame.width}x{frame.height} frame"
        )
    crop = frame.intensities[cfg.image_crop_y_min:cfg.image_crop_y_max, cfg.image_crop_x_min:cfg.image_crop_x_max]
    if crop.shape[0] < cfg.template_y_size or crop.shape[1] < cfg.template_x_size:
        raise ConfigError(
            f"template {cfg.template_x_size}x{cfg.template_y_size} is larger than the "
            f"{crop.shape[1]}x{crop.shape[0]} crop"
        )
    v = _block_mean(crop, cfg.template_y_size, cfg.template_x_size)
    if cfg.vt_normalisation > 0:
        v = np.clip(v + cfg.vt_normalisation * (0.5 - v.mean()), 0.0, 1.0)
    if cfg.vt_patch_normalise > 0:
        v = _patch_normalise(v, cfg.vt_patch_normalise, bool(cfg.vt_panoramic))
    return v


def candidate_shifts(cfg: RunConfig) -> List[int]:
    """Shifts in search order; smaller magnitudes first so ties resolve toward 0."""
    reach = cfg.vt_shift_match // cfg.vt_step_match
    shifts = [k * cfg.vt_step_match for k in range(-reach, reach + 1)]
    return sorted(shifts, key=lambda s: (abs(s), s))


def shift_scores(a: np.ndarray, b: np.ndarray, cfg: RunConfig) -> List[Tuple[int, float]]:
    """Mean absolute difference at every candidate shift.

    Shift ``s`` compares column ``j`` of ``a`` with column ``j + s`` of ``b``,
    so a positive shift finds ``b``'s content to the right of ``a``'s. Without
    wrapping, only the overlapping columns count.
    """
    if a.shape != b.shape:
        raise ValueError(f"template shapes differ: {a.shape} vs {b.shape}")
    width = a.shape[1]
    scores: List[Tuple[int, float]] = []
    for s in candidate_shifts(cfg):
        if cfg.vt_panoramic:
            diff = np.abs(a - np.roll(b, -s, axis=1))
        elif abs(s) >= width:
            continue
        elif s >= 0:
            diff = np.abs(a[:, : width - s] - b[:, s:])
        else:
            diff = np.abs(a[:, -s:] - b[:, : width + s])
        scores.append((s, float(diff.mean())))
    return scores


def compare(a: np.ndarray, b: np.ndarray, cfg: RunConfig) -> Tuple[float, int]:
    best_shift, best_score = min(shift_scores(a, b, cfg), key=lambda item: item[1])
    return best_score, best_shift


@dataclass
class VisualTemplate:
    id: int
    data: np.ndarray
    beta_pose: PackedPose
    activity: float = 0.0


class ViewEventKind(Enum):
    MATCHED = "matched"
    CREATED = "created"


@dataclass(frozen=True)
class ViewEvent:
    kind: ViewEventKind
    template_id: int
    strength: float = 0.0
    score: Optional[float] = None

    @property
    def matched(self) -> bool:
        return self.kind is ViewEventKind.MATCHED


@dataclass
class TemplateStore:
    """Append-only template list; ids are list positions."""

    templates: List[VisualTemplate] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.templates)

    def __getitem__(self, template_id: int) -> VisualTemplate:
        return self.templates[template_id]

    def add(self, data: np.ndarray, beta_pose: PackedPose, activity: float = 0.0) -> VisualTemplate:
        template = VisualTemplate(id=len(self.templates), data=data, beta_pose=beta_pose, activity=activity)
        self.templates.append(template)
        return template

    def decay(self, rate: float) -> None:
        for t in self.templates:
            t.activity = max(0.0, t.activity - rate)

    def best_match(self, vector: np.ndarray, cfg: RunConfig) -> Tuple[Optional[int], float]:
        best_id: Optional[int] = None
        best_score = float("inf")
        for t in self.templates:
            score, _ = compare(vector, t.data, cfg)
            # strict < keeps the lowest id on ties
            if score < best_score:
                best_id, best_score = t.id, score
        return best_id, best_score

    def export(self) -> str:
        """One line per template: ``id beta_x beta_y beta_theta activity rows cols values...``."""
        lines = ["# id beta_x beta_y beta_theta activity rows cols values(row-major)"]
        for t in self.templates:
            head = [str(t.id), repr(t.beta_pose.x), repr(t.beta_pose.y), repr(t.beta_pose.theta), repr(t.activity)]
            head += [str(n) for n in t.data.shape]
            lines.append(" ".join(head + [repr(float(v)) for v in t.data.ravel()]))
        return "\n".join(lines) + "\n"


def observe_template(vector: np.ndarray, store: TemplateStore, current_pose: PackedPose, cfg: RunConfig) -> ViewEvent:
    """Match an already preprocessed template against the store, or learn it.

    Every template first decays by ``pc_vt_restore``. A match injects with
    strength ``1 / (1 + activity)`` and then raises the activity by
    ``vt_active_decay``, so repeated activations weaken. A new template is
    bound to ``current_pose`` and starts with one activation's worth of activity.
    """
    store.decay(cfg.pc_vt_restore)
    best_id, best_score = store.best_match(vector, cfg)
    if best_id is not None and best_score <= cfg.vt_match_threshold:
        template = store[best_id]
        strength = 1.0 / (1.0 + template.activity)
        template.activity += cfg.vt_active_decay
        return ViewEvent(ViewEventKind.MATCHED, best_id, strength=strength, score=best_score)
    template = store.add(vector, current_pose, activity=cfg.vt_active_decay)
    logger.debug(
        "new template %d at (%.2f, %.2f, %.2f), best score %s",
        template.id, current_pose.x, current_pose.y, current_pose.theta,
        "n/a" if best_id is None else f"{best_score:.4f}",
    )
    return ViewEvent(ViewEventKind.CREATED, template.id, score=None if best_id is None else best_score)


def observe(frame: Frame, store: TemplateStore, current_pose: PackedPose, cfg: RunConfig) -> ViewEvent:
    return observe_template(preprocess(frame, cfg), store, current_pose, cfg)
