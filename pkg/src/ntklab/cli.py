"""Command-line entry point: binds JSON configs to the experiments and a
few library operations (single training runs, source norms, the
closed-form-vs-Monte-Carlo kernel validation).

Exit codes: 0 success, 2 malformed config, 3 numerical/module failure.
Every run writes its metadata sidecar before any result file, so an
interrupted run is detectable from the sidecar alone.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import traceback

import numpy as np

from . import __version__
from .activation import ActivationSpec
from .experiments import (
    EXPERIMENTS,
    ConfigError,
    apply_overrides,
    config_hash,
    fmt,
    load_config,
    _activation_from,
    _opt,
    _snapshot_schedule,
    _target_from,
)
from .kernel import closed_form_validation_report
from .model import a2_violations, forward, symmetric_init
from .numerics import SeededRng, sample_sphere
from .trainer import SampleStream, TrainConfig, asgd_kernel, asgd_network, kernel_predict

_CONFIG_COMMANDS = ("spectrum", "rate-check", "equiv-check", "layerwise", "source-norm", "train")


def _write_sidecar(out_dir: str, payload: dict) -> None:
    with open(os.path.join(out_dir, "metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _print_resolved(resolved: dict) -> None:
    print("resolved parameters:")
    width = max(len(k) for k in resolved)
    for key in sorted(resolved):
        print(f"  {key:<{width}}  {resolved[key]}")


def run_train(cfg: dict, out_dir: str, jobs: int = 1, dry_run: bool = False) -> dict:
    """One training run (network, kernel, or both paired on a shared
    stream); snapshots go to snapshots.csv and the averaged parameters to a
    checkpoint file."""
    where = "train config"
    trainer = _opt(cfg, "trainer", "network")
    if trainer not in ("network", "kernel", "paired"):
        raise ConfigError(f"{where}: trainer must be network, kernel or paired")
    act = _activation_from(_opt(cfg, "activation", {"kind": "swish", "s": 10.0}), where)
    resolved = {
        "trainer": trainer,
        "seed": int(_opt(cfg, "seed", 0)),
        "d": int(_opt(cfg, "d", 3)),
        "M": int(_opt(cfg, "M", 256)),
        "R": float(_opt(cfg, "R", 1.0)),
        "gamma": float(_opt(cfg, "gamma", 0.5)),
        "T": int(_opt(cfg, "T", 1000)),
        "eta": float(_opt(cfg, "eta", 0.04)),
        "lam": float(_opt(cfg, "lam", 0.1)),
        "theory_mode": bool(_opt(cfg, "theory_mode", False)),
        "noise_std": float(_opt(cfg, "noise_std", 0.1)),
        "clip_labels": bool(_opt(cfg, "clip_labels", True)),
        "snapshot_count": int(_opt(cfg, "snapshot_count", 10)),
        "test_set_size": int(_opt(cfg, "test_set_size", 512)),
        "component": _opt(cfg, "component", "full"),
    }
    if dry_run:
        return {"resolved": resolved}
    target = _target_from(_opt(cfg, "target", "first-coordinate"), where)
    allow_nonsmooth = not act.smooth
    schedule = _snapshot_schedule(resolved["T"], resolved["snapshot_count"])
    tcfg = TrainConfig(
        steps=resolved["T"], lam=resolved["lam"], eta=resolved["eta"],
        seed=resolved["seed"], snapshot_schedule=schedule,
        theory_mode=resolved["theory_mode"], allow_nonsmooth=allow_nonsmooth,
    )
    init = symmetric_init(
        SeededRng(resolved["seed"], 10_001), resolved["M"], resolved["d"],
        R=resolved["R"], gamma=resolved["gamma"],
    )
    stream = SampleStream(target, noise_std=resolved["noise_std"],
                          clip=resolved["clip_labels"], seed=resolved["seed"],
                          d=resolved["d"])
    test_x = sample_sphere(SeededRng(resolved["seed"], 10_002), resolved["d"],
                           resolved["test_set_size"])
    test_g = target.evaluate(test_x)

    net_res = ker_res = None
    if trainer in ("network", "paired"):
        net_res = asgd_network(init, act, tcfg, stream)
    if trainer in ("kernel", "paired"):
        ker_res = asgd_kernel(init, act, tcfg, stream, component=resolved["component"])

    rows = []
    base = net_res if net_res is not None else ker_res
    for i, snap in enumerate(base.snapshots):
        t = snap[0]
        if net_res is not None:
            pred = forward(net_res.snapshots[i][1], act, test_x)
            wall = net_res.snapshots[i][2]
        else:
            m, d = init.M, init.d
            vec = ker_res.snapshots[i][1]
            pred = kernel_predict(init, act, vec[:m], vec[m:m + m * d].reshape(m, d),
                                  vec[m + m * d:], test_x)
            wall = ker_res.snapshots[i][2]
        excess = max(0.5 * float(np.mean((pred - test_g) ** 2)), 0.0)
        sup_gap = ""
        if trainer == "paired":
            m, d = init.M, init.d
            vec = ker_res.snapshots[i][1]
            kpred = kernel_predict(init, act, vec[:m], vec[m:m + m * d].reshape(m, d),
                                   vec[m + m * d:], test_x)
            sup_gap = fmt(float(np.max(np.abs(pred - kpred))))
            wall = wall + ker_res.snapshots[i][2]
        rows.append((t, excess, sup_gap, wall))

    with open(os.path.join(out_dir, "snapshots.csv"), "w", encoding="utf-8") as fh:
        fh.write("t,excess_risk_estimate,sup_gap_if_paired,wall_time_ms\n")
        for t, excess, sup_gap, wall in rows:
            fh.write(f"{t},{fmt(excess)},{sup_gap},{fmt(wall)}\n")
    if net_res is not None:
        with open(os.path.join(out_dir, "checkpoint.json"), "w", encoding="utf-8") as fh:
            json.dump(net_res.averaged.to_dict(), fh)
    if ker_res is not None:
        with open(os.path.join(out_dir, "weights.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "component": resolved["component"],
                    "w_averaged": ker_res.iterate.as_vector(averaged=True).tolist(),
                },
                fh,
            )
    final_excess = rows[-1][1] if rows else float("nan")
    return {"final_excess_risk": final_excess, "snapshots": len(rows), "config": resolved}


_RUNNERS = dict(EXPERIMENTS)
_RUNNERS["train"] = run_train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntklab",
        description="Averaged-SGD dynamics for two-layer networks and their tangent-kernel "
                    "spectra: config-driven experiments with CSV outputs.",
    )
    parser.add_argument("--version", action="version", version=f"ntklab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _CONFIG_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment from a JSON config")
        p.add_argument("--config", required=True, help="path to the JSON config file")
        p.add_argument("--out", default=None, help="output directory (default from config)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        p.add_argument("--dry-run", action="store_true",
                       help="validate the config and print resolved parameters only")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides, last wins (dotted keys allowed)")
    v = sub.add_parser("validate-kernel",
                       help="closed-form relu kernels vs Monte Carlo oracle")
    v.add_argument("--d", type=int, nargs="+", default=[2, 3], help="dimensions to check")
    v.add_argument("--pairs", type=int, default=50)
    v.add_argument("--samples", type=int, default=10**6)
    v.add_argument("--seed", type=int, default=1234)
    v.add_argument("--R", type=float, default=1.0)
    v.add_argument("--gamma", type=float, default=0.5)
    v.add_argument("--out", default=None, help="optional directory for report.json")
    return parser


def _run_validate_kernel(args) -> int:
    worst = 0.0
    ok = True
    reports = []
    for d in args.d:
        rep = closed_form_validation_report(
            d=d, n_pairs=args.pairs, samples=args.samples, seed=args.seed,
            R=args.R, gamma=args.gamma,
        )
        reports.append(rep)
        for comp, stats in rep["components"].items():
            print(
                f"d={d} {comp:>6}: max |closed - mc| = {stats['max_abs_gap']:.3e} "
                f"({stats['max_gap_in_stderr']:.2f} standard errors) "
                f"{'ok' if stats['pass'] else 'FAIL'}"
            )
            worst = max(worst, stats["max_gap_in_stderr"])
        ok = ok and rep["pass"]
    print(f"worst deviation: {worst:.2f} standard errors -> {'PASS' if ok else 'FAIL'}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump({"reports": reports, "pass": ok}, fh, indent=2)
    return 0 if ok else 3


def dispatch(args) -> int:
    if args.command == "validate-kernel":
        return _run_validate_kernel(args)
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.overrides)
        if args.seed is not None:
            cfg["seed"] = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    runner = _RUNNERS[args.command]
    if args.dry_run:
        try:
            out = runner(cfg, out_dir=".", jobs=1, dry_run=True)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        _print_resolved(out["resolved"])
        return 0

    out_dir = args.out or cfg.get("out") or f"out_{args.command}"
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    sidecar = {
        "status": "running",
        "command": args.command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "overrides": list(args.overrides),
        "jobs": args.jobs,
        "package_version": __version__,
        "outside_theory_constants": a2_violations(
            float(cfg.get("R", 1.0)), float(cfg.get("gamma", 0.0))
        ),
        "started_unix": started,
    }
    _write_sidecar(out_dir, sidecar)
    try:
        report = runner(cfg, out_dir=out_dir, jobs=args.jobs)
    except ConfigError as exc:
        sidecar["status"] = "config-error"
        sidecar["error"] = str(exc)
        _write_sidecar(out_dir, sidecar)
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical / module failure -> exit 3
        sidecar["status"] = "failed"
        sidecar["error"] = f"{type(exc).__name__}: {exc}"
        _write_sidecar(out_dir, sidecar)
        traceback.print_exc()
        print(f"{args.command} failed in module code: {exc}", file=sys.stderr)
        return 3
    sidecar["status"] = "complete"
    sidecar["wall_time_s"] = time.time() - started
    if args.command == "rate-check":
        sidecar["pass"] = report["rate_fit"]["pass"]
    _write_sidecar(out_dir, sidecar)
    print(f"{args.command}: wrote results to {out_dir}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
