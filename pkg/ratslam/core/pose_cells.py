"""Pose-cell continuous attractor network.

The activity volume ``P`` is indexed ``(x', y', theta')`` and wraps on every
axis. One update is::

    inject -> P += excite(P) -> P += inhibit(P) -> P -= peak_inhibit(P)
           -> clip_normalize -> path_integrate

and the packet centroid is read off the result. ``peak_inhibit`` takes
``pc_peak_inhibit`` times the strongest cell off every cell. Layer ``k`` of
the theta axis represents heading ``2*pi*k / pc_dim_th``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from ratslam.app.config import RunConfig
from ratslam.errors import NetworkCollapseError
from ratslam.utils.logging import get_logger


logger = get_logger("ratslam.pose_cells")

# fractional shifts closer than this to an integer are treated as integer
_SNAP = 1e-12


@dataclass(frozen=True)
class PackedPose:
    """Fractional cell coordinates of the dominant packet, each in ``[0, dim)``."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        for name in ("x", "y", "theta"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.theta)


class KernelKind(Enum):
    EXCITATORY = "excitatory"
    INHIBITORY = "inhibitory"


@dataclass(frozen=True)
class Kernel3:
    weights: np.ndarray
    sigma: float
    kind: KernelKind = KernelKind.EXCITATORY

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])


def build_kernel(sigma: float, dim: int, kind: KernelKind = KernelKind.EXCITATORY) -> Kernel3:
    """Normalised cubic Gaussian, ``w[a,b,c] ~ exp(-(a^2+b^2+c^2) / (2 sigma^2))``."""
    if dim < 1 or dim % 2 == 0:
        raise ValueError(f"kernel dim must be a positive odd number, got {dim}")
    if not sigma > 0:
        raise ValueError(f"kernel sigma must be positive, got {sigma}")
    half = (dim - 1) // 2
    offsets = np.arange(-half, half + 1, dtype=float)
    a, b, c = np.meshgrid(offsets, offsets, offsets, indexing="ij")
    raw = np.exp(-(a ** 2 + b ** 2 + c ** 2) / (2.0 * sigma ** 2))
    return Kernel3(weights=raw / raw.sum(), sigma=float(sigma), kind=kind)


def _check_shapes(P: np.ndarray, kernel: Kernel3) -> None:
    if P.ndim != 3:
        raise ValueError(f"activity volume must be 3-D, got shape {P.shape}")
    if kernel.weights.ndim != 3 or any(k > n for k, n in zip(kernel.weights.shape, P.shape)):
        raise ValueError(f"kernel {kernel.weights.shape} does not fit volume {P.shape}")


def excite(P: np.ndarray, eps: Kernel3) -> np.ndarray:
    """Wrapped 3-D convolution of ``P`` with the excitatory kernel."""
    _check_shapes(P, eps)
    return ndimage.convolve(P, eps.weights, mode="wrap")


def inhibit(P: np.ndarray, psi: Kernel3, phi: float) -> np.ndarray:
    """Negative wrapped convolution with the inhibitory kernel, minus the global constant ``phi``."""
    _check_shapes(P, psi)
    return -ndimage.convolve(P, psi.weights, mode="wrap") - phi


def peak_inhibit(P: np.ndarray, fraction: float) -> float:
    """Uniform inhibition proportional to the strongest cell; zero when no cell is positive."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"peak inhibition fraction must lie in [0, 1), got {fraction}")
    return fraction * max(float(P.max()), 0.0)


def clip_normalize(P: np.ndarray) -> np.ndarray:
    clipped = np.clip(P, 0.0, None)
    total = float(clipped.sum())
    if not total > 0.0 or not math.isfinite(total):
        raise NetworkCollapseError("pose-cell activity collapsed: no positive energy left after clipping")
    return clipped / total


def _shift_axis(a: np.ndarray, shift: float, axis: int) -> np.ndarray:
    """Linear-interpolated circular shift along one axis; integer shifts are exact rolls."""
    whole = math.floor(shift)
    frac = shift - whole
    if frac < _SNAP:
        frac = 0.0
    elif frac > 1.0 - _SNAP:
        whole += 1
        frac = 0.0
    out = np.roll(a, whole, axis=axis)
    if frac:
        out = (1.0 - frac) * out + frac * np.roll(out, 1, axis=axis)
    return out


def layer_headings(dim_th: int) -> np.ndarray:
    return 2.0 * math.pi * np.arange(dim_th) / dim_th


def path_integrate(P: np.ndarray, delta_s: float, delta_theta: float, cfg: RunConfig) -> np.ndarray:
    """Shift each theta layer along its own heading by ``delta_s``, then rotate by ``delta_theta``."""
    if not (math.isfinite(delta_s) and math.isfinite(delta_theta)):
        raise ValueError(f"non-finite odometry: delta_s={delta_s}, delta_theta={delta_theta}")
    out = P
    if delta_s != 0.0:
        out = np.empty_like(P)
        cells = delta_s / cfg.pc_cell_x_size
        for k, heading in enumerate(layer_headings(P.shape[2])):
            layer = _shift_axis(P[:, :, k], cells * math.cos(heading), axis=0)
            out[:, :, k] = _shift_axis(layer, cells * math.sin(heading), axis=1)
    if delta_theta != 0.0:
        out = _shift_axis(out, delta_theta * P.shape[2] / (2.0 * math.pi), axis=2)
    return out


def _trilinear(coord: Sequence[float], dims: Sequence[int]) -> List[Tuple[Tuple[int, int, int], float]]:
    corners: List[Tuple[List[int], List[float]]] = []
    for value, n in zip(coord, dims):
        if not (math.isfinite(value) and 0.0 <= value < n):
            raise ValueError(f"pose coordinate {tuple(coord)} outside the wrapped range {tuple(dims)}")
        base = math.floor(value)
        frac = value - base
        corners.append(([base % n, (base + 1) % n], [1.0 - frac, frac]))
    out: List[Tuple[Tuple[int, int, int], float]] = []
    for ix, wx in zip(*corners[0]):
        for iy, wy in zip(*corners[1]):
            for it, wt in zip(*corners[2]):
                w = wx * wy * wt
                if w > 0.0:
                    out.append(((ix, iy, it), w))
    return out


def inject(P: np.ndarray, links: Iterable[Tuple[PackedPose, float]], energy: float) -> np.ndarray:
    """Add ``energy * strength`` around each linked pose, split trilinearly. Not normalised."""
    out = P.copy()
    for pose, strength in links:
        if strength < 0:
            raise ValueError(f"injection strength must be >= 0, got {strength}")
        cells = _trilinear(pose.as_tuple(), P.shape)
        idx = tuple(np.array([c[0][axis] for c in cells]) for axis in range(3))
        np.add.at(out, idx, np.array([energy * strength * c[1] for c in cells]))
    return out


def _wrap_coord(value: float, dim: int) -> float:
    wrapped = value % dim
    # x % dim can round up to dim for tiny negative x
    return 0.0 if wrapped >= dim else float(wrapped)


def centroid(P: np.ndarray, radius: int = 3) -> PackedPose:
    """Energy-weighted mean over a wrapped window around the global maximum.

    Ties for the maximum go to the lowest linear index. The window radius is
    clamped per axis so that it never covers a cell twice.
    """
    peak = np.unravel_index(int(np.argmax(P)), P.shape)
    if P.max() == P.min():
        return PackedPose(*(float(i) for i in peak))
    offsets = []
    indices = []
    for centre, n in zip(peak, P.shape):
        r = min(radius, (n - 1) // 2)
        off = np.arange(-r, r + 1)
        offsets.append(off.astype(float))
        indices.append((centre + off) % n)
    window = P[np.ix_(*indices)]
    mass = float(window.sum())
    coords = []
    for axis, (centre, n) in enumerate(zip(peak, P.shape)):
        if mass > 0.0:
            other = tuple(i for i in range(3) if i != axis)
            shift = float(np.dot(window.sum(axis=other), offsets[axis])) / mass
        else:
            shift = 0.0
        coords.append(_wrap_coord(centre + shift, n))
    return PackedPose(*coords)


def wrapped_distance(a: PackedPose, b: PackedPose, dim_xy: int, dim_th: int) -> float:
    """Euclidean distance in cell units, wrapping x', y' over ``dim_xy`` and theta' over ``dim_th``."""
    total = 0.0
    for u, v, n in ((a.x, b.x, dim_xy), (a.y, b.y, dim_xy), (a.theta, b.theta, dim_th)):
        d = abs(u - v) % n
        d = min(d, n - d)
        total += d * d
    return math.sqrt(total)


def step(
    P: np.ndarray,
    odometry: Tuple[float, float],
    injections: Iterable[Tuple[PackedPose, float]],
    cfg: RunConfig,
    eps: Optional[Kernel3] = None,
    psi: Optional[Kernel3] = None,
) -> Tuple[np.ndarray, PackedPose]:
    """One full network update; returns the new volume and its packet centroid."""
    if eps is None:
        eps = build_kernel(cfg.pc_sigma_e, cfg.pc_w_e_dim, KernelKind.EXCITATORY)
    if psi is None:
        psi = build_kernel(cfg.pc_sigma_i, cfg.pc_w_i_dim, KernelKind.INHIBITORY)
    delta_s, delta_theta = odometry
    P = inject(P, injections, cfg.pc_vt_inject_energy)
    P = P + excite(P, eps)
    P = P + inhibit(P, psi, cfg.pc_global_inhibit)
    P = P - peak_inhibit(P, cfg.pc_peak_inhibit)
    P = clip_normalize(P)
    P = path_integrate(P, delta_s, delta_theta, cfg)
    return P, centroid(P, cfg.excite_radius)


class PoseCellNetwork:
    """Owns one activity volume and its kernels; not safe for concurrent ``step`` calls."""

    def __init__(self, cfg: RunConfig, P: Optional[np.ndarray] = None):
        self.cfg = cfg
        self.shape = (cfg.pc_dim_xy, cfg.pc_dim_xy, cfg.pc_dim_th)
        self.eps = build_kernel(cfg.pc_sigma_e, cfg.pc_w_e_dim, KernelKind.EXCITATORY)
        self.psi = build_kernel(cfg.pc_sigma_i, cfg.pc_w_i_dim, KernelKind.INHIBITORY)
        if P is None:
            # single packet at the grid centre so the first centroid is defined
            P = np.zeros(self.shape)
            P[tuple(n // 2 for n in self.shape)] = 1.0
        elif P.shape != self.shape:
            raise ValueError(f"initial volume {P.shape} does not match config grid {self.shape}")
        self.P = P
        self.pose = centroid(P, cfg.excite_radius)
        self.steps = 0

    def step(self, delta_s: float, delta_theta: float, injections: Iterable[Tuple[PackedPose, float]] = ()) -> PackedPose:
        try:
            self.P, self.pose = step(self.P, (delta_s, delta_theta), injections, self.cfg, self.eps, self.psi)
        except NetworkCollapseError:
            logger.error("pose-cell network collapsed at step %d", self.steps)
            raise
        self.steps += 1
        return self.pose

    def distance(self, a: PackedPose, b: PackedPose) -> float:
        return wrapped_distance(a, b, self.cfg.pc_dim_xy, self.cfg.pc_dim_th)
