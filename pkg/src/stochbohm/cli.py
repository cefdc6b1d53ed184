"""Command line: ``stochbohm run | verify | sweep``.

Exit codes: 0 ok, 1 a check failed, 2 configuration error, 3 runtime error.
``STOCHBOHM_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from .config import ConfigError, dump_config, load_config, parse_config, set_path
from .experiments import render_outputs, run_experiment, write_outputs
from .outputs import csv_text, json_text
from .verification import CHECKS, run_checks

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
ENV_OUT = "STOCHBOHM_OUT"

log = logging.getLogger("stochbohm")


def shipped_configs() -> list[Path]:
    root = resources.files("stochbohm") / "configs"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(ENV_OUT) or "stochbohm-out")


def _load(path: str, seed: int | None):
    try:
        cfg = load_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return cfg.with_seed(seed) if seed is not None else cfg


def cmd_run(args) -> int:
    cfg = _load(args.config, args.seed)
    result = run_experiment(cfg, threads=args.threads)
    files = render_outputs(cfg, result)
    out = _out_dir(args.out)
    write_outputs(out, files)
    for name, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {cfg.scenario}.{name}")
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK if result.passed else EXIT_CHECK


def cmd_verify(args) -> int:
    names = args.check or None
    if names:
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            raise ConfigError(f"unknown check(s) {unknown}; available: {sorted(CHECKS)}", "--check")
    configs = [_load(p, args.seed) for p in (args.config or [])]
    report = {"checks": {}, "scenarios": {}}
    failed = 0
    for res in run_checks(names):
        print(res.line())
        report["checks"][res.name] = {"passed": res.passed, "details": res.details}
        failed += not res.passed
    for path, cfg in zip(args.config or [], configs):
        result = run_experiment(cfg, threads=args.threads)
        for name, ok in result.checks.items():
            print(f"{'PASS' if ok else 'FAIL'}  {Path(path).name}:{name}")
            failed += not ok
        report["scenarios"][Path(path).name] = result.to_dict()
    if args.out:
        write_outputs(Path(args.out), {"verify_report.json": json_text(report)})
    print(f"{failed} failure(s)")
    return EXIT_OK if failed == 0 else EXIT_CHECK


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _headline(result) -> dict:
    out = {}
    for section in ("visibility", "frequencies", "metrics"):
        for k, v in getattr(result, section).items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                out[f"{section}.{k}"] = v
    return out


def cmd_sweep(args) -> int:
    base = _load(args.config, args.seed)
    values = [_parse_value(v) for v in args.values.split(",")]
    configs = [parse_config(json.dumps(set_path(base.resolved, args.param, v))) for v in values]
    rows, keys, failed = [], None, 0
    for v, cfg in zip(values, configs):
        result = run_experiment(cfg, threads=args.threads)
        head = _headline(result)
        keys = keys or sorted(head)
        rows.append([v, *(head.get(k, float("nan")) for k in keys), result.passed])
        failed += not result.passed
        print(f"{args.param}={v}: " + ", ".join(f"{k}={head[k]:.6g}" for k in keys[:4]))
    files = {"sweep.csv": csv_text([args.param, *keys, "passed"], rows),
             "resolved_config.json": dump_config(base)}
    write_outputs(_out_dir(args.out), files)
    return EXIT_OK if failed == 0 else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochbohm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./stochbohm-out)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for trajectory ensembles")

    common(sub.add_parser("run", help="run one scenario and write its results"))
    v = sub.add_parser("verify", help="run the invariant/oracle suite")
    common(v, config_required=False)
    v.add_argument("--config", action="append", help="also run this scenario's checks (repeatable)")
    v.add_argument("--check", action="append", help=f"run only this check (repeatable): {', '.join(CHECKS)}")
    s = sub.add_parser("sweep", help="vary one config entry over a list of values")
    common(s)
    s.add_argument("--param", required=True, help="dotted path into the config, e.g. stochastic.etas.0.high")
    s.add_argument("--values", required=True, help="comma-separated JSON values")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # surfaced with its stage context
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
