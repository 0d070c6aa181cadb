"""Command-line entry point: ``oskf {selfcheck,eval,fps,demo}``.

Exit codes: 0 success, 1 internal failure (including failed checks),
2 bad input.
"""

import argparse
import json
import os
import sys

from .errors import FormatError, KeyMismatch, OskfError, PlyError

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class BadInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise BadInput(f"{self.prog}: {message}")


def _require_file(path, flag):
    if not os.path.isfile(path):
        raise BadInput(f"{flag}: no such file: {path}")


def thread_count(flag_value):
    """Thread count for numeric libraries; OSKF_THREADS beats the flag."""
    env = os.environ.get("OSKF_THREADS")
    raw = env if env not in (None, "") else flag_value
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise BadInput(f"thread count must be an integer, got {raw!r}") from None
    if n < 1:
        raise BadInput(f"thread count must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------- commands

def cmd_selfcheck(args):
    from .selfcheck import format_results, run_checks

    if args.checkpoint is not None:
        _require_file(args.checkpoint, "--checkpoint")
    results = run_checks(args.checkpoint)
    print(format_results(results))
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_eval(args):
    from .metrics import evaluate, read_models

    for path, flag in ((args.pred, "--pred"), (args.gt, "--gt"), (args.models, "--models")):
        _require_file(path, flag)
    try:
        models = read_models(args.models)
        report = evaluate(args.pred, args.gt, models)
    except KeyMismatch as e:
        lines = [str(e)]
        lines += [f"  no prediction for {k}" for k in e.missing_pred]
        lines += [f"  no ground truth for {k}" for k in e.missing_gt]
        raise BadInput("\n".join(lines)) from None
    except (ValueError, KeyError, OskfError) as e:
        raise BadInput(f"{type(e).__name__}: {e}") from None
    print(report.table())
    if args.report:
        with open(args.report, "w") as f:
            json.dump(report.to_json(), f, indent=1, sort_keys=True)
            f.write("\n")
    return EXIT_OK


def cmd_fps(args):
    from .keypoints import farthest_point_sample, read_ply, save_keypoints

    _require_file(args.ply, "--ply")
    try:
        points = read_ply(args.ply)
    except PlyError as e:
        raise BadInput(f"{args.ply}: {e}") from None
    try:
        kp = farthest_point_sample(points, args.k)
    except OskfError as e:
        raise BadInput(str(e)) from None
    save_keypoints(args.out, kp)
    print(f"wrote {kp.k} keypoints to {args.out}")
    return EXIT_OK


DEMO_FLAGS = ("seed", "steps", "scenes")


def demo_config(args):
    from .demo import DemoConfig

    values = {}
    if args.config:
        _require_file(args.config, "--config")
        try:
            with open(args.config) as f:
                values = json.load(f)
        except ValueError as e:
            raise BadInput(f"--config: {e}") from None
        if not isinstance(values, dict):
            raise BadInput("--config must hold a flat JSON object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
    for name in DEMO_FLAGS:
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    out = values.pop("out", None)
    try:
        cfg = DemoConfig.from_dict(values)
    except (KeyError, TypeError) as e:
        raise BadInput(f"--config: {e.args[0] if e.args else e}") from None
    if cfg.steps < 0 or cfg.scenes < 1:
        raise BadInput("--steps must be >= 0 and --scenes >= 1")
    return cfg, out


def cmd_demo(args):
    from .demo import run_demo

    cfg, out_from_file = demo_config(args)
    out = args.out or out_from_file or "demo_out"
    result = run_demo(cfg)
    ckpt = result.save(out)
    print(result.table())
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


# ---------------------------------------------------------------- main

def build_parser():
    p = _Parser(prog="oskf", description="Cascaded keypoint-feature pose refinement toolkit.")
    p.add_argument("--threads", type=int, default=None,
                   help="threads for numeric libraries (default: all cores; OSKF_THREADS overrides)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("selfcheck", help="run the invariant suite")
    s.add_argument("--checkpoint", help="also validate this parameter checkpoint")
    s.set_defaults(func=cmd_selfcheck)

    s = sub.add_parser("eval", help="score predicted poses against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--models", required=True)
    s.add_argument("--report", help="write the report as JSON here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("fps", help="farthest point sampling on a PLY model")
    s.add_argument("--ply", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fps)

    s = sub.add_parser("demo", help="train a toy cascade and print per-iteration errors")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--scenes", type=int)
    s.add_argument("--config", help="flat JSON object of demo options")
    s.add_argument("--out", help="output directory (default: demo_out)")
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        threads = thread_count(args.threads)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=threads):
            return args.func(args)
    except BadInput as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # noqa: BLE001 - last-resort reporting
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
