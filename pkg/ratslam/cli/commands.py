"""The ``run``, ``synth`` and ``eval`` commands.

Each ``cmd_*`` function returns a process exit code: 0 ok, 1 runtime error,
2 bad input, 3 missing data. The ``*_run``/``evaluate_run`` helpers underneath
do the work and raise, so tests can drive them directly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from ratslam.app import RunConfig, apply_overrides, build_runtime, dump_config, load_config
from ratslam.data.ingest import load_dataset, nearest_index, synchronize
from ratslam.data.synth_world import generate, load_scenario
from ratslam.errors import MissingDataError, RatSlamError
from ratslam.eval.metrics import MetricReport, evaluate
from ratslam.utils.logging import get_logger

from . import exports


logger = get_logger("ratslam.cli")
console = Console(stderr=True)

PathLike = Union[str, Path]

RUN_CONFIG_NAME = "config.txt"
EVAL_REPORT_NAME = "eval_report"


def _guard(action: Callable[[], Any]) -> int:
    try:
        action()
    except RatSlamError as e:
        console.print(f"[bold red]error:[/bold red] {escape(str(e))}")
        return e.exit_code
    except OSError as e:
        console.print(f"[bold red]error:[/bold red] {escape(str(e))}")
        return 1
    return 0


def execute_run(
    dataset: PathLike,
    cfg: RunConfig,
    out: PathLike,
    dump_volumes: bool = False,
    snapshot_every: int = 0,
) -> Dict[str, Any]:
    """Run SLAM over a dataset and write every export under ``out``; returns the summary."""
    dataset = Path(dataset)
    out = Path(out)
    resize = None
    if cfg.image_resize_width:
        resize = (cfg.image_resize_width, cfg.image_resize_height)
    stream = load_dataset(dataset, resize=resize)
    steps = synchronize(stream, cfg.gt_join_window)

    out.mkdir(parents=True, exist_ok=True)
    runtime = build_runtime(cfg, events_path=str(out / "events.jsonl"))
    pipeline = runtime.pipeline
    name = dataset.resolve().name
    runtime.recorder.start(name, {"frames": len(steps), "ground_truth": stream.ground_truth is not None})

    results = []
    try:
        for s in steps:
            results.append(runtime.step(stream.load_frame(s.index), s.delta_s, s.delta_theta, s.timestamp))
            if dump_volumes:
                exports.write_volume(out / "volumes" / f"step_{s.index:06d}.bin", pipeline.network.P)
            if snapshot_every and (s.index + 1) % snapshot_every == 0:
                exports.write_text(
                    out / "snapshots" / f"trajectory_{s.index:06d}.csv", exports.trajectory_csv(pipeline.map)
                )
    except RatSlamError as e:
        runtime.recorder.end("failed", {"step": len(results), "error": str(e)})
        raise

    summary = {
        "dataset": name,
        "steps": len(results),
        "templates": len(pipeline.templates),
        "experiences": len(pipeline.map),
        "links": len(pipeline.map.links),
        "loop_closures": runtime.recorder.loop_closures,
        "graph_residual": pipeline.map.graph_residual(),
    }

    track = pipeline.estimate_track()
    gt = [s.ground_truth for s in steps if s.ground_truth is not None]
    nodes = np.array([[p.x, p.y] for _, p in pipeline.map.trajectory()], dtype=float).reshape(-1, 2)

    exports.write_text(out / RUN_CONFIG_NAME, dump_config(cfg))
    exports.write_text(out / "experience_map.txt", pipeline.map.export())
    exports.write_text(out / "templates.txt", pipeline.templates.export())
    runtime.recorder.save(str(out / "step_log.csv"))
    exports.write_text(out / "trajectory.csv", exports.trajectory_csv(pipeline.map))
    exports.write_text(out / "dead_reckoning.csv", exports.dead_reckoning_csv(results))
    exports.write_text(out / "estimate_track.csv", exports.estimate_track_csv(results, track))
    exports.write_text(
        out / "overlay.svg",
        exports.render_svg(track, nodes, np.array(gt, dtype=float) if gt else None),
    )
    exports.write_text(out / "summary.json", exports.summary_json(summary))
    runtime.recorder.end("finished", summary)
    logger.info("run finished: %d steps, %d experiences", len(results), len(pipeline.map))
    return summary


def _summary_table(title: str, values: Dict[str, Any]) -> Table:
    table = Table(title=title)
    table.add_column("key", style="cyan")
    table.add_column("value", justify="right")
    for key, value in values.items():
        table.add_row(key, f"{value:.4f}" if isinstance(value, float) else str(value))
    return table


def cmd_run(
    dataset: PathLike,
    config_path: Optional[PathLike],
    out: PathLike,
    overrides: Sequence[str] = (),
    dump_volumes: bool = False,
    snapshot_every: int = 0,
) -> int:
    def action():
        cfg = apply_overrides(load_config(config_path), overrides)
        summary = execute_run(dataset, cfg, out, dump_volumes=dump_volumes, snapshot_every=snapshot_every)
        console.print(_summary_table(f"run {summary['dataset']}", summary))

    return _guard(action)


def cmd_synth(spec_path: PathLike, out: PathLike, overrides: Iterable[str] = (), seed: Optional[int] = None) -> int:
    def action():
        items: List[str] = list(overrides)
        if seed is not None:
            items.append(f"seed={seed}")
        spec = load_scenario(spec_path, items)
        generate(spec, out)
        console.print(f"[green]dataset written to[/green] {escape(str(out))}")

    return _guard(action)


def evaluate_run(run_dir: PathLike, dataset: PathLike, use_alignment: bool = False) -> MetricReport:
    """Join a run's estimate track with the dataset's ground truth and score it.

    Writes ``eval_report.txt`` and ``eval_report.json`` into ``run_dir``.
    """
    run_dir = Path(run_dir)
    config_path = run_dir / RUN_CONFIG_NAME
    cfg = load_config(config_path if config_path.is_file() else None)
    times, est = exports.read_track_csv(run_dir / "estimate_track.csv")
    dead_reckoning = None
    if (run_dir / "dead_reckoning.csv").is_file():
        _, dead_reckoning = exports.read_track_csv(run_dir / "dead_reckoning.csv")
        if len(dead_reckoning) != len(est):
            raise MissingDataError("dead_reckoning.csv and estimate_track.csv disagree on the step count")
    if len(est) == 0:
        raise MissingDataError(f"{run_dir}: estimate track is empty")

    gt = load_dataset(dataset).ground_truth_xy()
    if gt is None:
        raise MissingDataError(f"dataset {dataset} has no ground truth")
    pairs = []
    for i, t in enumerate(times):
        j = nearest_index(gt[:, 0], float(t))
        if abs(gt[j, 0] - t) <= cfg.gt_join_window:
            pairs.append((i, j))
    if not pairs:
        raise MissingDataError(
            f"no estimate timestamp lies within gt_join_window={cfg.gt_join_window}s of a ground-truth fix"
        )

    report = evaluate(est, gt[:, 1:3], pairs, dead_reckoning=dead_reckoning, use_alignment=use_alignment)
    exports.write_text(run_dir / f"{EVAL_REPORT_NAME}.txt", report.to_text())
    exports.write_text(run_dir / f"{EVAL_REPORT_NAME}.json", report.to_json())
    return report


def cmd_eval(run_dir: PathLike, dataset: PathLike, align: bool = False) -> int:
    def action():
        report = evaluate_run(run_dir, dataset, use_alignment=align)
        console.print(_summary_table("trajectory evaluation", report.as_dict()))

    return _guard(action)
