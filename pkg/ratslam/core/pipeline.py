from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional

import numpy as np

from ratslam.app.config import RunConfig
from ratslam.core.experience_map import ExperienceMap, MapEvent, MapEventKind, MapPose
from ratslam.core.local_view import Frame, TemplateStore, ViewEvent, observe
from ratslam.core.pose_cells import PackedPose, PoseCellNetwork
from ratslam.utils.logging import get_logger


logger = get_logger("ratslam.pipeline")


@dataclass(frozen=True)
class StepResult:
    step: int
    timestamp: float
    view: ViewEvent
    map_event: MapEvent
    pc_pose: PackedPose
    dead_reckoning: MapPose
    n_templates: int
    n_experiences: int

    @property
    def active_experience(self) -> int:
        return self.map_event.experience_id

    @property
    def active_template(self) -> int:
        return self.view.template_id


class SlamPipeline:
    """In-process stepping engine: local view -> pose cells -> experience map, once per frame.

    Dead reckoning is integrated alongside in the same frame as the map,
    starting from experience 0's pose. The first step's odometry is treated as
    motion before the run: the pose cells, the map and the dead-reckoning track
    all ignore it.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.network = PoseCellNetwork(cfg)
        self.templates = TemplateStore()
        self.map = ExperienceMap(cfg)
        self.dead_reckoning = MapPose(0.0, 0.0, math.radians(cfg.exp_initial_em_deg))
        self.active_history: List[int] = []
        self.steps = 0

    def step(self, frame: Frame, delta_s: float, delta_theta: float, timestamp: float) -> StepResult:
        first = self.steps == 0
        view = observe(frame, self.templates, self.network.pose, self.cfg)
        injections = []
        if view.matched:
            injections.append((self.templates[view.template_id].beta_pose, view.strength))
        if first:
            delta_s = delta_theta = 0.0
        pc_pose = self.network.step(delta_s, delta_theta, injections)
        if first:
            map_event = self.map.update(pc_pose, view.template_id, timestamp=timestamp)
        else:
            map_event = self.map.update(pc_pose, view.template_id, delta_s, delta_theta, timestamp)
            dr = self.dead_reckoning
            self.dead_reckoning = MapPose(
                dr.x + delta_s * math.cos(dr.theta), dr.y + delta_s * math.sin(dr.theta), dr.theta + delta_theta
            )
        if map_event.kind is MapEventKind.LOOP_CLOSED:
            logger.info("step %d: %s", self.steps, map_event.describe())
        self.active_history.append(map_event.experience_id)
        result = StepResult(
            step=self.steps,
            timestamp=timestamp,
            view=view,
            map_event=map_event,
            pc_pose=pc_pose,
            dead_reckoning=self.dead_reckoning,
            n_templates=len(self.templates),
            n_experiences=len(self.map),
        )
        self.steps += 1
        return result

    def estimate_track(self) -> np.ndarray:
        """``(x, y)`` of the experience active at each step, using the current (relaxed) poses."""
        poses = {i: p for i, p in self.map.trajectory()}
        return np.array([[poses[i].x, poses[i].y] for i in self.active_history], dtype=float).reshape(-1, 2)

    def run(
        self,
        inputs: Iterable[tuple],
        on_step: Optional[Callable[[StepResult], None]] = None,
    ) -> List[StepResult]:
        """Step through ``(frame, delta_s, delta_theta, timestamp)`` tuples."""
        results = []
        for frame, delta_s, delta_theta, timestamp in inputs:
            result = self.step(frame, delta_s, delta_theta, timestamp)
            if on_step is not None:
                on_step(result)
            results.append(result)
        return results
