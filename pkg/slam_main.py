import argparse
import sys

from ratslam.app.config import DEFAULT_CONFIG_PATH
from ratslam.cli.commands import cmd_eval, cmd_run, cmd_synth
from ratslam.utils.logging import set_verbosity


def _parse_arguments(argv=None):
    """解析命令行参数"""
    parser = argparse.ArgumentParser(description="RatSLAM offline pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run SLAM over a dataset directory")
    run.add_argument("dataset", help="dataset directory (contains dataset.toml)")
    run.add_argument("--config", default=str(DEFAULT_CONFIG_PATH), help="key = value config file")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key, repeatable")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--dump-volumes", action="store_true", help="write the pose-cell volume after every step")
    run.add_argument("--snapshot-every", type=int, default=0, metavar="N",
                     help="write the experience trajectory every N steps, 0 = never")

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("spec", help="scenario file (key = value)")
    synth.add_argument("--out", required=True, help="dataset directory to write")
    synth.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one scenario key, repeatable")
    synth.add_argument("--seed", type=int, default=None, help="noise seed, overrides the scenario's")

    ev = sub.add_parser("eval", help="score a run against ground truth")
    ev.add_argument("run_dir", help="output directory of a previous run")
    ev.add_argument("dataset", help="dataset directory the run was made on")
    ev.add_argument("--align", action="store_true", help="report the rigidly aligned distance as d_hausdorff")

    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_arguments(argv)
    set_verbosity(args.verbose)
    if args.command == "run":
        if args.snapshot_every < 0:
            print("ERROR: --snapshot-every must be >= 0", file=sys.stderr)
            return 2
        return cmd_run(
            args.dataset,
            args.config,
            args.out,
            overrides=args.overrides,
            dump_volumes=args.dump_volumes,
            snapshot_every=args.snapshot_every,
        )
    if args.command == "synth":
        return cmd_synth(args.spec, args.out, overrides=args.overrides, seed=args.seed)
    return cmd_eval(args.run_dir, args.dataset, align=args.align)


if __name__ == "__main__":
    sys.exit(main())
