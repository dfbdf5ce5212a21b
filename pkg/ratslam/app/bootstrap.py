from __future__ import annotations

from typing import Optional

from ratslam.core.pipeline import SlamPipeline
from ratslam.utils.logging import StructuredLogger
from ratslam.utils.step_log import StepRecorder

from .config import RunConfig


class SlamRuntime:
    """Container for the objects one run needs: the pipeline and its recorders."""

    def __init__(self, config: RunConfig, pipeline: SlamPipeline, recorder: StepRecorder, events: StructuredLogger):
        self.config = config
        self.pipeline = pipeline
        self.recorder = recorder
        self.events = events

    def step(self, frame, delta_s: float, delta_theta: float, timestamp: float):
        result = self.pipeline.step(frame, delta_s, delta_theta, timestamp)
        self.recorder.record(result)
        return result


def build_runtime(config: RunConfig, events_path: Optional[str] = None) -> SlamRuntime:
    """Build pipeline, step recorder and event log from a single config object."""
    events = StructuredLogger(events_path)
    recorder = StepRecorder(logger=events)
    pipeline = SlamPipeline(config)
    return SlamRuntime(config=config, pipeline=pipeline, recorder=recorder, events=events)
