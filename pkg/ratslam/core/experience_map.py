"""Experience map: a graph of (pose-cell state, view, map pose) nodes joined by odometry links.

Relaxation is Jacobi-style. For a link ``f -> t`` with transform ``d`` the
residual is ``r = p_t - (p_f (+) d)``; each pass adds ``alpha * r / deg(f)`` to
the source and subtracts ``alpha * r / deg(t)`` from the target, where ``deg``
counts the links touching a node. Headings are residual-corrected the same
way with wrapped differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, List, Optional, Tuple

import numpy as np

from ratslam.app.config import RunConfig
from ratslam.core.pose_cells import PackedPose, wrapped_distance
from ratslam.utils.logging import get_logger


logger = get_logger("ratslam.experience_map")

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    r = a % TWO_PI
    return r - TWO_PI if r > math.pi else r


def wrap_angles(a: np.ndarray) -> np.ndarray:
    r = np.mod(a, TWO_PI)
    return np.where(r > math.pi, r - TWO_PI, r)


@dataclass(frozen=True)
class MapPose:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise ValueError(f"non-finite map pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    def compose(self, delta: "MapPose") -> "MapPose":
        """``self (+) delta`` with ``delta`` expressed in this pose's frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return MapPose(
            self.x + c * delta.x - s * delta.y,
            self.y + s * delta.x + c * delta.y,
            self.theta + delta.theta,
        )


@dataclass
class Experience:
    id: int
    pc_pose: PackedPose
    view_id: int
    pose: MapPose
    timestamp: float = 0.0
    out_links: List[int] = field(default_factory=list)
    in_links: List[int] = field(default_factory=list)


@dataclass(frozen=True)
class Link:
    from_id: int
    to_id: int
    delta_pose: MapPose
    delta_t: float

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise ValueError(f"self link on experience {self.from_id}")
        if self.delta_t < 0:
            raise ValueError(f"link {self.from_id}->{self.to_id} has negative delta_t {self.delta_t}")


class MapEventKind(Enum):
    STAYED = "stayed"
    CREATED = "created"
    LOOP_CLOSED = "loop_closed"


@dataclass(frozen=True)
class MapEvent:
    kind: MapEventKind
    experience_id: int
    from_id: Optional[int] = None

    def describe(self) -> str:
        if self.kind is MapEventKind.LOOP_CLOSED:
            return f"loop_closed({self.from_id},{self.experience_id})"
        if self.kind is MapEventKind.CREATED:
            return f"created({self.experience_id})"
        return "stayed"


class OdometryAccumulator:
    """Relative pose since the active experience, in that experience's frame."""

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.x = 0.0
        self.y = 0.0
        self.theta = 0.0

    def add(self, delta_s: float, delta_theta: float) -> None:
        # move, then turn
        self.x += delta_s * math.cos(self.theta)
        self.y += delta_s * math.sin(self.theta)
        self.theta = wrap_angle(self.theta + delta_theta)

    def as_pose(self) -> MapPose:
        return MapPose(self.x, self.y, self.theta)


def dead_reckon(deltas: Iterable[Tuple[float, float]], start: MapPose) -> List[MapPose]:
    """Integrate ``(delta_s, delta_theta)`` pairs from ``start``; the result begins with ``start``."""
    pose = start
    out = [start]
    for delta_s, delta_theta in deltas:
        pose = MapPose(
            pose.x + delta_s * math.cos(pose.theta),
            pose.y + delta_s * math.sin(pose.theta),
            pose.theta + delta_theta,
        )
        out.append(pose)
    return out


def _link_arrays(links: List[Link], n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    src = np.array([l.from_id for l in links], dtype=int)
    dst = np.array([l.to_id for l in links], dtype=int)
    deltas = np.array([[l.delta_pose.x, l.delta_pose.y, l.delta_pose.theta] for l in links], dtype=float).reshape(-1, 3)
    degree = np.bincount(src, minlength=n) + np.bincount(dst, minlength=n)
    return src, dst, deltas, np.maximum(degree, 1).astype(float)


def _residuals(poses: np.ndarray, src: np.ndarray, dst: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    th = poses[src, 2]
    c, s = np.cos(th), np.sin(th)
    r = np.empty_like(deltas)
    r[:, 0] = poses[dst, 0] - (poses[src, 0] + c * deltas[:, 0] - s * deltas[:, 1])
    r[:, 1] = poses[dst, 1] - (poses[src, 1] + s * deltas[:, 0] + c * deltas[:, 1])
    r[:, 2] = wrap_angles(poses[dst, 2] - poses[src, 2] - deltas[:, 2])
    return r


def residual_norm(poses: np.ndarray, src: np.ndarray, dst: np.ndarray, deltas: np.ndarray) -> float:
    """Root of the summed squared translation and heading residuals."""
    if len(src) == 0:
        return 0.0
    return float(np.sqrt(np.sum(_residuals(poses, src, dst, deltas) ** 2)))


def relax_arrays(
    poses: np.ndarray,
    src: np.ndarray,
    dst: np.ndarray,
    deltas: np.ndarray,
    degree: np.ndarray,
    alpha: float,
) -> Tuple[np.ndarray, float]:
    """One simultaneous correction pass; returns new poses and the largest translation applied."""
    if len(src) == 0:
        return poses.copy(), 0.0
    r = _residuals(poses, src, dst, deltas)
    correction = np.zeros_like(poses)
    np.add.at(correction, src, r)
    np.add.at(correction, dst, -r)
    correction *= alpha / degree[:, None]
    out = poses + correction
    out[:, 2] = wrap_angles(out[:, 2])
    return out, float(np.max(np.hypot(correction[:, 0], correction[:, 1])))


class ExperienceMap:
    """Append-only experience graph with one active experience."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.experiences: List[Experience] = []
        self.links: List[Link] = []
        self.active_id: Optional[int] = None
        self.odometry = OdometryAccumulator()
        self._last_time = 0.0

    def __len__(self) -> int:
        return len(self.experiences)

    @property
    def active(self) -> Optional[Experience]:
        return None if self.active_id is None else self.experiences[self.active_id]

    # -- graph construction -------------------------------------------------

    def add_experience(self, pc_pose: PackedPose, view_id: int, pose: MapPose, timestamp: float = 0.0) -> Experience:
        exp = Experience(id=len(self.experiences), pc_pose=pc_pose, view_id=view_id, pose=pose, timestamp=timestamp)
        self.experiences.append(exp)
        return exp

    def add_link(self, from_id: int, to_id: int, delta_pose: MapPose, delta_t: float) -> Link:
        link = Link(from_id, to_id, delta_pose, delta_t)
        self.experiences[from_id].out_links.append(len(self.links))
        self.experiences[to_id].in_links.append(len(self.links))
        self.links.append(link)
        return link

    def linked(self, a: int, b: int) -> bool:
        return any(
            self.links[i].to_id == b for i in self.experiences[a].out_links
        ) or any(self.links[i].to_id == a for i in self.experiences[b].out_links)

    # -- matching -----------------------------------------------------------

    def score_all(self, current_pc: PackedPose, current_view: int) -> np.ndarray:
        """Pose-cell distance plus a view-mismatch penalty, one score per experience."""
        mu_v = self.cfg.view_mismatch_weight
        return np.array(
            [
                wrapped_distance(e.pc_pose, current_pc, self.cfg.pc_dim_xy, self.cfg.pc_dim_th)
                + (0.0 if e.view_id == current_view else mu_v)
                for e in self.experiences
            ],
            dtype=float,
        )

    def update(
        self,
        current_pc: PackedPose,
        current_view: int,
        delta_s: float = 0.0,
        delta_theta: float = 0.0,
        timestamp: float = 0.0,
    ) -> MapEvent:
        """Integrate odometry, then stay, create an experience, or jump to a known one."""
        if not self.experiences:
            heading = math.radians(self.cfg.exp_initial_em_deg)
            exp = self.add_experience(current_pc, current_view, MapPose(0.0, 0.0, heading), timestamp)
            self._activate(exp.id, timestamp)
            return MapEvent(MapEventKind.CREATED, exp.id)

        self.odometry.add(delta_s, delta_theta)
        scores = self.score_all(current_pc, current_view)
        best = int(np.argmin(scores))
        active = self.active
        delta_t = max(0.0, timestamp - self._last_time)

        if scores[best] >= self.cfg.exp_delta_pc_threshold:
            rel = self.odometry.as_pose()
            exp = self.add_experience(current_pc, current_view, active.pose.compose(rel), timestamp)
            self.add_link(active.id, exp.id, rel, delta_t)
            self._activate(exp.id, timestamp)
            return MapEvent(MapEventKind.CREATED, exp.id)

        if best == active.id:
            return MapEvent(MapEventKind.STAYED, best)

        if not self.linked(active.id, best):
            self.add_link(active.id, best, self.odometry.as_pose(), delta_t)
        residual = self.relax()
        logger.info("loop closure %d -> %d, residual after relaxation %.4f", active.id, best, residual)
        self._activate(best, timestamp)
        return MapEvent(MapEventKind.LOOP_CLOSED, best, from_id=active.id)

    def _activate(self, exp_id: int, timestamp: float) -> None:
        self.active_id = exp_id
        self.odometry.reset()
        self._last_time = timestamp

    # -- relaxation ---------------------------------------------------------

    def _pose_array(self) -> np.ndarray:
        return np.array([[e.pose.x, e.pose.y, e.pose.theta] for e in self.experiences], dtype=float).reshape(-1, 3)

    def _store_poses(self, poses: np.ndarray) -> None:
        for exp, (x, y, th) in zip(self.experiences, poses):
            exp.pose = replace(exp.pose, x=float(x), y=float(y), theta=float(th))

    def graph_residual(self) -> float:
        src, dst, deltas, _ = _link_arrays(self.links, len(self.experiences))
        return residual_norm(self._pose_array(), src, dst, deltas)

    def relax_once(self, alpha: Optional[float] = None) -> float:
        alpha = self.cfg.exp_correction if alpha is None else alpha
        src, dst, deltas, degree = _link_arrays(self.links, len(self.experiences))
        poses, largest = relax_arrays(self._pose_array(), src, dst, deltas, degree, alpha)
        self._store_poses(poses)
        return largest

    def relax_trace(self, loops: Optional[int] = None, alpha: Optional[float] = None) -> List[float]:
        """Run ``loops`` passes (default ``exp_loops``); returns the residual before and after each pass.

        ``alpha`` is not range-checked here so that unstable rates can be studied.
        """
        loops = self.cfg.exp_loops if loops is None else loops
        alpha = self.cfg.exp_correction if alpha is None else alpha
        src, dst, deltas, degree = _link_arrays(self.links, len(self.experiences))
        poses = self._pose_array()
        trace = [residual_norm(poses, src, dst, deltas)]
        for _ in range(loops):
            poses, _ = relax_arrays(poses, src, dst, deltas, degree, alpha)
            trace.append(residual_norm(poses, src, dst, deltas))
        self._store_poses(poses)
        return trace

    def relax(self, loops: Optional[int] = None, alpha: Optional[float] = None) -> float:
        return self.relax_trace(loops, alpha)[-1]

    # -- output -------------------------------------------------------------

    def trajectory(self) -> List[Tuple[int, MapPose]]:
        return [(e.id, e.pose) for e in self.experiences]

    def export(self) -> str:
        lines = ["# experiences: E id x y theta view_id pc_x pc_y pc_theta timestamp"]
        for e in self.experiences:
            lines.append(
                " ".join(
                    ["E", str(e.id), repr(e.pose.x), repr(e.pose.y), repr(e.pose.theta), str(e.view_id)]
                    + [repr(v) for v in e.pc_pose.as_tuple()]
                    + [repr(e.timestamp)]
                )
            )
        lines.append("# links: L from to dx dy dtheta dt")
        for l in self.links:
            lines.append(
                " ".join(
                    ["L", str(l.from_id), str(l.to_id)]
                    + [repr(l.delta_pose.x), repr(l.delta_pose.y), repr(l.delta_pose.theta), repr(l.delta_t)]
                )
            )
        return "\n".join(lines) + "\n"
