"""Command line entry point.

    hybridns run <scenario> [--config file] [overrides...]

Exit codes: 0 success, 2 solver divergence, 3 invalid configuration.
"""

import argparse
import sys
from dataclasses import fields

from .errors import ConfigError, HybridNSError, PicardDivergenceError
from .scenarios import SCENARIOS, ScenarioConfig, run_scenario

_LIST_KEYS = {"resolutions", "re", "seeds"}
_INT_KEYS = {"k", "kbar", "m", "mbar", "steps", "max_iters", "nx", "ny"}
_FLOAT_KEYS = {"nu", "alpha", "beta", "chi", "theta", "dt", "tol", "relaxation"}
_BOOL_KEYS = {"dump_fields"}


def _parse_value(key, raw):
    raw = raw.strip()
    try:
        if key in _LIST_KEYS:
            return tuple(float(v) if key == "re" else int(v)
                         for v in raw.replace(",", " ").split())
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def read_config_file(path):
    """Flat key=value file; blank lines and '#' comments ignored."""
    known = {f.name for f in fields(ScenarioConfig)}
    out = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, raw = line.split("=", 1)
                key = key.strip().replace("-", "_")
                if key not in known:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                out[key] = _parse_value(key, raw)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="hybridns")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a benchmark scenario")
    run.add_argument("scenario", choices=SCENARIOS)
    run.add_argument("--config", help="key=value config file")
    run.add_argument("--out", help="output directory")
    run.add_argument("--resolutions", help="comma-separated mesh resolutions")
    run.add_argument("--order-k", dest="k", type=int)
    run.add_argument("--order-kbar", dest="kbar", type=int)
    run.add_argument("--order-m", dest="m", type=int)
    run.add_argument("--order-mbar", dest="mbar", type=int)
    run.add_argument("--nu", type=float)
    run.add_argument("--re", help="comma-separated Reynolds numbers")
    run.add_argument("--alpha", type=float)
    run.add_argument("--beta", type=float)
    run.add_argument("--chi", type=float)
    run.add_argument("--theta", type=float)
    run.add_argument("--dt", type=float)
    run.add_argument("--steps", type=int)
    run.add_argument("--seed", dest="seeds", help="comma-separated seeds")
    run.add_argument("--tol", type=float)
    run.add_argument("--max-iters", dest="max_iters", type=int)
    run.add_argument("--relaxation", type=float)
    run.add_argument("--nx", type=int)
    run.add_argument("--ny", type=int)
    run.add_argument("--dump-fields", dest="dump_fields", action="store_true",
                     default=None)
    return parser


def config_from_args(args):
    settings = {}
    if args.config:
        settings.update(read_config_file(args.config))
    for key in ("out", "k", "kbar", "m", "mbar", "nu", "alpha", "beta", "chi",
                "theta", "dt", "steps", "tol", "max_iters", "relaxation",
                "nx", "ny", "dump_fields"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in ("resolutions", "re", "seeds"):
        raw = getattr(args, key, None)
        if raw is not None:
            settings[key] = _parse_value(key, raw)
    settings.setdefault("out", f"out-{args.scenario}")
    try:
        return ScenarioConfig(scenario=args.scenario, **settings)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; report them as invalid config.
        return 0 if exc.code in (0, None) else 3
    try:
        config = config_from_args(args)
        report = run_scenario(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except PicardDivergenceError as exc:
        print(f"solver divergence: {exc}", file=sys.stderr)
        return 2
    except HybridNSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {config.out}/report.csv ({len(report.rows)} runs)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
