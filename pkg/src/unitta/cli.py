"""Command-line interface: ``unitta gen|verify|run|sweep``.

Exit codes: 0 ok, 1 bad input (config, schema, I/O, constraint), 2 failed
verification, 3 some sweep rows failed.

Every command that writes an output directory also writes the resolved
``config.yaml`` and a ``manifest.json`` listing each file with its SHA-256;
rerunning with that config reproduces the same bytes.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig, dump_config, grid_run_configs, load_config
from .engine import MODES, run_detailed
from .errors import ConstraintViolation, UniTTAError
from .markov import correlation_vector, stationary_closed_form
from .stream import Stream, empirical_report, generate, joint_quotas

EXIT_OK, EXIT_INPUT, EXIT_VERIFY, EXIT_PARTIAL = 0, 1, 2, 3

MARGINAL_L1_TOL = 0.02
SELF_TRANSITION_TOL = 0.01


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; exit status 2 is reserved for verification
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, command: str, config_path: Optional[str], cfg: RunConfig, files: list[str]) -> None:
    (out / "config.yaml").write_text(dump_config(cfg))
    files = ["config.yaml", *files]
    _write_json(
        out / "manifest.json",
        {
            "command": command,
            "config": config_path,
            "out": str(out),
            "resolved_seeds": {
                "stream": cfg.scenario.seed,
                "world": int(cfg.world["seed"]),
                "model": int(cfg.model["seed"]),
            },
            "files": {name: _sha256(out / name) for name in files},
        },
    )


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "quota", False):
        cfg = cfg.with_quota(True)
    return cfg


def _report(stream: Stream, cfg: RunConfig) -> dict:
    return {
        "setting": cfg.scenario.code,
        "length": len(stream),
        "uses_quota": cfg.scenario.uses_quota,
        "joint": empirical_report(stream, "joint").to_dict(),
        "domain": empirical_report(stream, "domain").to_dict(),
        "class": empirical_report(stream, "class").to_dict(),
    }


def cmd_gen(args) -> int:
    cfg = _resolve(args)
    stream = generate(cfg.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stream.to_csv(out / "stream.csv")
    _write_json(out / "report.json", _report(stream, cfg))
    _write_manifest(out, "gen", args.config, cfg, ["stream.csv", "report.json"])
    print(f"wrote {len(stream)} records ({cfg.scenario.code}) to {out}")
    return EXIT_OK


def verify_stream(stream: Stream, cfg: RunConfig) -> list[dict]:
    """Checks for a stream against its config; each entry has ``name``, ``ok``, ``detail``."""
    s = cfg.scenario
    checks = []
    if len(stream) != s.length:
        checks.append({"name": "length", "ok": False, "detail": f"{len(stream)} records, config says {s.length}"})
    if s.uses_quota:
        want = joint_quotas(s.domain_axis, s.class_axis, s.length)
        got = stream.counts()
        dev = int(np.abs(got - want).sum())
        checks.append({"name": "quota_counts", "ok": dev == 0, "detail": f"total absolute deviation {dev}"})
        return checks
    for name, axis in (("domain", s.domain_axis), ("class", s.class_axis)):
        alpha = correlation_vector(axis)
        pi = stationary_closed_form(alpha)
        rep = empirical_report(stream, name)
        l1 = float(np.abs(rep.frequencies - pi).sum())
        checks.append(
            {"name": f"{name}_marginal", "ok": l1 <= MARGINAL_L1_TOL, "detail": f"L1 {l1:.4f} (tol {MARGINAL_L1_TOL})"}
        )
        rate = rep.self_transition
        seen = np.isfinite(rate)
        worst = float(np.abs(rate[seen] - alpha[seen]).max()) if seen.any() else float("nan")
        ok = bool(seen.all()) and worst <= SELF_TRANSITION_TOL
        checks.append(
            {
                "name": f"{name}_self_transition",
                "ok": ok,
                "detail": f"max |rate - alpha| {worst:.4f} (tol {SELF_TRANSITION_TOL}), {int((~seen).sum())} states unvisited",
            }
        )
    return checks


def cmd_verify(args) -> int:
    cfg = _resolve(args)
    s = cfg.scenario
    stream = Stream.from_csv(args.stream, s.domain_axis.n, s.class_axis.n)
    checks = verify_stream(stream, cfg)
    for c in checks:
        print(f"{'PASS' if c['ok'] else 'FAIL'} {c['name']}: {c['detail']}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "verify.json", {"setting": s.code, "checks": checks})
    return EXIT_OK if all(c["ok"] for c in checks) else EXIT_VERIFY


def _check_mode(mode: Optional[str]) -> None:
    if mode is not None and mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")


def cmd_run(args) -> int:
    cfg = _resolve(args)
    if args.mode is not None:
        cfg = cfg.with_engine(mode=args.mode)
    stream = generate(cfg.scenario)
    world = cfg.make_world()
    model = cfg.fit_model(world)
    metrics, engine, _ = run_detailed(cfg.engine_config(), stream, world, model, setting=cfg.scenario.code)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", metrics.to_dict())
    bank = engine.assignment_bank if engine.cfg.three_pass else engine.global_banks[engine.cfg.domain_pred_layer]
    _write_json(out / "bank.json", {"layer": engine.cfg.domain_pred_layer, **bank.snapshot()})
    _write_manifest(out, "run", args.config, cfg, ["metrics.json", "bank.json"])
    print(f"{cfg.scenario.code} {metrics.mode}: error {metrics.error:.2f}%")
    return EXIT_OK


def _sweep_row(cfg: RunConfig, modes, world, model) -> dict:
    row = {"setting": cfg.scenario.code}
    try:
        stream = generate(cfg.scenario)
        for mode in modes:
            m, _, _ = run_detailed(cfg.with_engine(mode=mode).engine_config(), stream, world, model)
            row[mode] = m.error
        row["status"] = "ok"
    except UniTTAError as e:
        row["status"] = f"failed: {e}"
    return row


def sweep(base: RunConfig, grid: int, modes=MODES, workers: int = 1) -> list[dict]:
    cells = grid_run_configs(base, grid)
    world = base.make_world()
    model = base.fit_model(world)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda c: _sweep_row(c, modes, world, model), cells))


def grid_csv(rows: list[dict], modes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["setting", *modes, "status"])
    for r in rows:
        w.writerow([r["setting"], *(f"{r[m]:.4f}" if m in r else "" for m in modes), r["status"]])
    ok = [r for r in rows if r["status"] == "ok"]
    w.writerow(["average", *(f"{np.mean([r[m] for r in ok]):.4f}" if ok else "" for m in modes), f"{len(ok)}/{len(rows)} ok"])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    if args.config:
        base = _resolve(args)
    else:
        base = RunConfig.from_dict({"domain": {"n": 5, "mode": "iid"}, "class": {"n": 4, "mode": "iid"}})
        if args.seed is not None:
            base = base.with_seed(args.seed)
        if args.quota:
            base = base.with_quota(True)
    modes = MODES if args.mode is None else (args.mode,)
    rows = sweep(base, args.grid, modes, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # single writer: rows are joined here, after every worker has finished
    (out / "grid.csv").write_text(grid_csv(rows, modes))
    _write_manifest(out, "sweep", args.config, base, ["grid.csv"])
    failed = [r for r in rows if r["status"] != "ok"]
    print(f"{len(rows) - len(failed)}/{len(rows)} settings ok; grid written to {out / 'grid.csv'}")
    return EXIT_PARTIAL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="unitta", description="Markov test streams and three-pass test-time adaptation on a synthetic world.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="YAML run config")
        sp.add_argument("--seed", type=int, help="override the stream seed")
        sp.add_argument("--quota", action="store_true", help="force exact-count quota masking")

    g = sub.add_parser("gen", help="generate a stream CSV and empirical report")
    common(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen, parser=g)

    v = sub.add_parser("verify", help="check a stream against its config")
    common(v)
    v.add_argument("--stream", required=True, help="stream CSV")
    v.add_argument("--out", help="optional directory for verify.json")
    v.set_defaults(func=cmd_verify, parser=v)

    r = sub.add_parser("run", help="run the engine on a generated stream")
    common(r)
    r.add_argument("--mode", help=f"one of {', '.join(MODES)}")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run, parser=r)

    s = sub.add_parser("sweep", help="run every mode over the setting grid")
    common(s, config_required=False)
    s.add_argument("--grid", type=int, choices=(24, 36), default=24)
    s.add_argument("--mode", help="restrict to one mode")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep, parser=s)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_mode(getattr(args, "mode", None))
        return args.func(args)
    except UsageError as e:
        args.parser.print_usage(sys.stderr)
        print(f"unitta: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ConstraintViolation as e:
        print(f"unitta: constraint violated: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (UniTTAError, OSError) as e:
        print(f"unitta: error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
