from __future__ import annotations
import json
import os
from typing import Any, Dict, Optional


import logging


class StructuredLogger:
    """结构化 JSON-lines 事件日志，每个事件一行。

    Keys are sorted and no wall-clock time is added, so two runs over the same
    inputs produce byte-identical files.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        if self.path:
            parent = os.path.dirname(self.path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            # truncate: one log per run
            open(self.path, 'w', encoding='utf-8').close()
        self._logger = logging.getLogger("ratslam.structured")

    def log(self, event: Dict[str, Any]):
        line = json.dumps(event, ensure_ascii=False, sort_keys=True)
        if self.path:
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(line + '\n')
        else:
            self._logger.debug(line)


def get_logger(name: str = __name__, level: Optional[int] = None, logfile: Optional[str] = None) -> logging.Logger:
    """Return a configured stdlib logger. If logfile is provided, add a FileHandler.

    Handlers live on the shared ``ratslam`` parent logger so that
    ``set_verbosity`` changes every module at once; children only get a level
    when one is passed explicitly.
    """
    root = logging.getLogger("ratslam")
    if not root.handlers:
        fmt = logging.Formatter('%(asctime)s %(levelname)s [%(name)s] %(message)s')
        sh = logging.StreamHandler()
        sh.setFormatter(fmt)
        root.addHandler(sh)
        root.setLevel(logging.WARNING)
        root.propagate = False
    if logfile:
        fh = logging.FileHandler(logfile)
        fh.setFormatter(logging.Formatter('%(asctime)s %(levelname)s [%(name)s] %(message)s'))
        root.addHandler(fh)
    logger = logging.getLogger(name)
    if level is not None:
        logger.setLevel(level)
    return logger


def set_verbosity(verbose: bool) -> None:
    get_logger("ratslam").setLevel(logging.DEBUG if verbose else logging.INFO)
