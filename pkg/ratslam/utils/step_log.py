from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, astuple, dataclass
from typing import Any, Dict, List, Optional

from ratslam.core.experience_map import MapEventKind
from ratslam.core.local_view import ViewEventKind
from ratslam.core.pipeline import StepResult


STEP_LOG_COLUMNS = ("step", "timestamp", "active_experience", "active_template", "n_experiences", "n_templates", "event")
STEP_LOG_HEADER = ",".join(STEP_LOG_COLUMNS)


@dataclass
class StepRow:
    step: int
    timestamp: float
    active_experience: int
    active_template: int
    n_experiences: int
    n_templates: int
    event: str

    def fields(self) -> List[str]:
        return [repr(float(v)) if isinstance(v, float) else str(v) for v in astuple(self)]


class StepRecorder:
    """记录一次运行从开始到结束的逐步状态。

    Every step becomes one CSV row. Template creations and map events other
    than ``stayed`` are also forwarded to an optional structured logger
    (anything with a ``log(dict)`` method), together with start and end
    records.
    """

    def __init__(self, logger: Optional[Any] = None):
        self.logger = logger
        self._rows: List[StepRow] = []
        self.loop_closures = 0
        self.meta: Dict[str, Any] = {}

    def _emit(self, event: Dict[str, Any]) -> None:
        if self.logger:
            self.logger.log(event)

    def start(self, dataset: str, metadata: Optional[Dict[str, Any]] = None) -> None:
        self.meta = metadata or {}
        self._emit({"phase": "start", "dataset": dataset, "meta": self.meta})

    def record(self, result: StepResult) -> StepRow:
        row = StepRow(
            step=result.step,
            timestamp=result.timestamp,
            active_experience=result.active_experience,
            active_template=result.active_template,
            n_experiences=result.n_experiences,
            n_templates=result.n_templates,
            event=result.map_event.describe(),
        )
        self._rows.append(row)
        if result.view.kind is ViewEventKind.CREATED:
            self._emit({"phase": "template", "step": row.step, "timestamp": row.timestamp, "template": row.active_template})
        kind = result.map_event.kind
        if kind is not MapEventKind.STAYED:
            if kind is MapEventKind.LOOP_CLOSED:
                self.loop_closures += 1
            self._emit(
                {
                    "phase": kind.value,
                    "step": row.step,
                    "timestamp": row.timestamp,
                    "experience": result.map_event.experience_id,
                    "from": result.map_event.from_id,
                }
            )
        return row

    def end(self, status: str = "finished", summary: Optional[Dict[str, Any]] = None) -> None:
        self._emit({"phase": "end", "status": status, "summary": summary})

    @property
    def rows(self) -> List[StepRow]:
        return list(self._rows)

    def as_dicts(self) -> List[Dict[str, Any]]:
        return [asdict(r) for r in self._rows]

    def to_csv(self) -> str:
        # loop_closed(f,t) holds a comma, so rows go through the csv writer
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(STEP_LOG_COLUMNS)
        writer.writerows(r.fields() for r in self._rows)
        return buf.getvalue()

    def save(self, path: str) -> str:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.to_csv())
        return path
