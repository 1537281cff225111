"""Command line entry point: ``lpvff plan|identify|compare --config <path> --out <dir>``.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
failure, 4 closed-loop instability.
"""

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import LpvffError
from .identify import IdentifiedModel
from .pipeline import _controller, cmd_compare, cmd_identify, cmd_plan

log = logging.getLogger("lpvff")


def resolved_config_text(config):
    """Config file text followed by the values derived from it."""
    ctrl = _controller(config)
    ident = config.identification
    if ident.gamma_policy == "fixed":
        gamma = f"fixed at {ident.gamma_value!r}"
    elif ident.gamma_policy == "trace":
        gamma = f"{ident.gamma_scale!r} * trace(Phi K Phi^T) / N"
    else:
        gamma = f"evidence maximization over {config.search.gamma_range!r}"
    derived = [
        "# derived values",
        f"# sample_period = {config.trajectory.sample_period!r} s",
        f"# lead gain = {ctrl.gain!r}",
        f"# lead zero = {ctrl.zero_freq!r} rad/s",
        f"# lead pole = {ctrl.pole_freq!r} rad/s",
        f"# gamma = {gamma}",
    ]
    return config.to_ini() + "\n".join(derived) + "\n"


def build_parser():
    parser = argparse.ArgumentParser(prog="lpvff", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=("plan", "identify", "compare"))
    parser.add_argument("--config", help="experiment config file (default: built-in benchmark)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--model", help="identified model JSON for compare (default: <out>/model.json)")
    parser.add_argument("--echo-config", action="store_true", help="print the resolved config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args):
    config = load_config(args.config)
    if args.echo_config:
        sys.stdout.write(resolved_config_text(config))
        return 0
    if args.out is None:
        raise SystemExit("lpvff: --out is required unless --echo-config is given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.cfg").write_text(resolved_config_text(config))

    if args.command == "plan":
        bundle = cmd_plan(config, out)
        print(f"reference: {len(bundle)} samples -> {out / 'reference.csv'}")
    elif args.command == "identify":
        result = cmd_identify(config, out)
        for name, err in result.theta_errors.items():
            print(f"{name}: max relative error {err['max_relative_error']:.3e}")
        print(f"model -> {out / 'model.json'}")
    else:
        model_path = Path(args.model) if args.model else out / "model.json"
        errors = None
        if model_path.exists():
            model = IdentifiedModel.from_json(model_path)
        else:
            log.info("no model at %s; identifying first", model_path)
            result = cmd_identify(config, out)
            model, errors = result.model, result.theta_errors
        report = cmd_compare(config, model, out, errors)
        for name, value in report.rms.items():
            print(f"rms e {name:>12}: {value:.3e} m")
        print(f"static/dynamic ratio: {report.ratios['static_over_dynamic']:.1f}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except LpvffError as exc:
        print(f"lpvff {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
