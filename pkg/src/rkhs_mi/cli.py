"""Command-line front end: ``train``, ``sweep``, ``bounds`` and ``gradcheck``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from itertools import product
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, complexity, critics, gradcheck, harness, plotting, storage
from .complexity import BoundInputs, RegWeights, default_reg_weights
from .critics import AsklParams
from .datagen import GaussianTask, make_marginal, sample_task
from .errors import ConfigError, DivergenceError, RkhsMiError
from .harness import TrainConfig
from .numkit import RngStream
from .storage import ExperimentConfig

log = logging.getLogger("rkhs_mi")

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED = 0, 1, 2
METRICS = ("bias", "variance", "rmse")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _workers(flag: Optional[int], config_value: int = 1) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("RKHS_MI_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"RKHS_MI_WORKERS must be an integer, got {env!r}") from None
    return max(1, config_value)


def _load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.load(path)


def _write_steps(path: Path, records, smooth_decay: float) -> None:
    smoothed = harness.ema_smooth([r.bound_value for r in records], smooth_decay)
    storage.write_csv(
        path,
        storage.STEPS_COLUMNS,
        (
            (r.step, r.level_true_mi, r.bound_value, s, r.train_objective, r.reg_value)
            for r, s in zip(records, smoothed)
        ),
    )


def cmd_train(config_path: Optional[str], out_dir, seed: Optional[int] = None) -> int:
    """Run one trial; write steps.csv, critic.bin, trace.svg and manifest.json."""
    started = _now()
    cfg = _load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    tcfg = cfg.train_config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "steps": out / "steps.csv",
        "critic": out / "critic.bin",
        "trace": out / "trace.svg",
        "manifest": out / "manifest.json",
    }
    try:
        records, params, ema = harness.run_trial(tcfg, return_critic=True)
    except DivergenceError as exc:
        _write_steps(paths["steps"], getattr(exc, "records", []), cfg.smooth_decay)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    _write_steps(paths["steps"], records, cfg.smooth_decay)
    meta = {
        "estimator": tcfg.estimator,
        "ema_a": ema.value if ema is not None else None,
        "dim": tcfg.dim,
        "freq_scale": tcfg.freq_scale if tcfg.critic == "askl" else None,
    }
    storage.save_critic(paths["critic"], params, meta)
    raw = [r.bound_value for r in records]
    plotting.plot_trace(
        paths["trace"],
        [r.step for r in records],
        raw,
        harness.ema_smooth(raw, cfg.smooth_decay),
        [r.level_true_mi for r in records],
        title=f"{tcfg.estimator.upper()} / {tcfg.critic.upper()}",
    )
    storage.write_json(
        paths["manifest"],
        {
            "command": "train",
            "version": __version__,
            "seed": tcfg.seed,
            "config": storage.train_config_dict(tcfg),
            "smooth_decay": cfg.smooth_decay,
            "started": started,
            "finished": _now(),
            "outputs": {k: str(v) for k, v in paths.items()},
        },
    )
    return EXIT_OK


def sweep_cells(cfg: ExperimentConfig) -> List[TrainConfig]:
    """Cross product of estimators, critics, batch sizes and regularization weights."""
    ests = cfg.estimators or [cfg.estimator]
    crits = cfg.critics or [cfg.critic]
    cells = []
    for est, crit, bs in product(ests, crits, cfg.batch_sizes):
        if cfg.lambda1_grid is None and cfg.lambda2_grid is None:
            regs = [None]
        else:
            default = default_reg_weights(est) if crit == "askl" else RegWeights()
            l1s = cfg.lambda1_grid if cfg.lambda1_grid is not None else [default.lambda1]
            l2s = cfg.lambda2_grid if cfg.lambda2_grid is not None else [default.lambda2]
            regs = [RegWeights(l1, l2) for l1, l2 in product(l1s, l2s)]
        for reg in regs:
            cells.append(cfg.train_config(estimator=est, critic=crit, batch_size=bs, reg=reg))
    return cells


def cmd_sweep(config_path: Optional[str], out_dir, seed: Optional[int] = None,
              trials: Optional[int] = None, workers: Optional[int] = None) -> int:
    """Bias / variance / RMSE per level for every sweep cell; writes stats.csv and SVGs."""
    started = _now()
    cfg = _load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    if trials is not None:
        cfg.trials = trials
    n_workers = _workers(workers, cfg.workers)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cells = sweep_cells(cfg)
    jobs = [(ci, t) for ci in range(len(cells)) for t in range(cfg.trials)]
    job_cfgs = [replace(cells[ci], trial=t) for ci, t in jobs]
    try:
        if n_workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                results = list(pool.map(harness.run_trial, job_cfgs))
        else:
            results = [harness.run_trial(c) for c in job_cfgs]
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    by_cell: dict = {}
    for (ci, _), recs in zip(jobs, results):
        by_cell.setdefault(ci, []).append(recs)

    rows = []
    curves: dict = {}
    for ci, cell in enumerate(cells):
        for st in harness.aggregate_stats(by_cell[ci], cfg.tail_frac):
            rows.append((
                cell.estimator, cell.critic, cell.batch_size, cell.reg.lambda1, cell.reg.lambda2,
                st.true_mi, st.bias, st.variance, st.rmse, st.n_estimates,
            ))
            label = f"{cell.critic} bs={cell.batch_size} l1={cell.reg.lambda1:g} l2={cell.reg.lambda2:g}"
            for metric in METRICS:
                xs, ys = curves.setdefault((cell.estimator, metric), {}).setdefault(label, ([], []))
                xs.append(st.true_mi)
                ys.append(getattr(st, metric))
    stats_path = out / "stats.csv"
    storage.write_csv(stats_path, storage.STATS_COLUMNS, rows)
    figures = []
    for (est, metric), series in sorted(curves.items()):
        fig_path = out / f"{est}_{metric}.svg"
        plotting.plot_metric(fig_path, series, metric, title=f"{est.upper()} {metric}")
        figures.append(str(fig_path))
    storage.write_json(
        out / "manifest.json",
        {
            "command": "sweep",
            "version": __version__,
            "seed": cfg.seed,
            "trials": cfg.trials,
            "tail_frac": cfg.tail_frac,
            "cells": [storage.train_config_dict(c) for c in cells],
            "started": started,
            "finished": _now(),
            "outputs": {"stats": str(stats_path), "figures": figures},
        },
    )
    return EXIT_OK


def bounds_report(p, header: dict, mi: float, dim: Optional[int], cubed: bool,
                  delta: float, n: int, m: int, seed: int = 0, probe: int = 1024,
                  mc_trials: int = 0) -> dict:
    """Rademacher certificates, the critic bound M and both generalization bounds."""
    if not isinstance(p, AsklParams):
        raise ConfigError("bound audits need an ASKL critic; no certificate exists for the MLP")
    if dim is None:
        dim = header.get("meta", {}).get("dim") or p.input_dim // 2
    if 2 * dim != p.input_dim:
        raise ConfigError(f"task dim {dim} does not match critic input width {p.input_dim}")
    task = GaussianTask.from_mi(mi, dim, cubed)
    probe_rng = RngStream(seed, 0)
    sample_rng = RngStream(seed, 1)
    probe_joint = sample_task(task, probe, probe_rng)
    probe_set = np.vstack([probe_joint, make_marginal(probe_joint, probe_rng)])
    joint = sample_task(task, n, sample_rng)
    marg = make_marginal(sample_task(task, max(m, 2), sample_rng), sample_rng)[:m]

    cert_n = complexity.rademacher_bound(p, joint)
    cert_m = complexity.rademacher_bound(p, marg)
    m_est = complexity.estimate_M(p, probe_set)
    meta = header.get("meta", {})
    estimator = meta.get("estimator")
    a = meta.get("ema_a") if estimator == "mine" and meta.get("ema_a") else math.e
    inp = BoundInputs(M=m_est.value, a=a, n=n, m=m, delta=delta,
                      rad_n=cert_n.bound_tight, rad_m=cert_m.bound_tight)
    tuba = complexity.tuba_gen_bound(inp)
    dv = complexity.dv_gen_bound(inp)
    report = {
        "critic": header.get("kind"),
        "estimator": estimator,
        "task": {"true_mi": mi, "dim": dim, "rho": task.rho, "cubed": cubed},
        "delta": delta,
        "n": n,
        "m": m,
        "certificate_n": cert_n.to_dict(),
        "certificate_m": cert_m.to_dict(),
        "M": {"empirical": m_est.empirical, "certified": m_est.certified, "value": m_est.value},
        "a": a,
        "tuba_gen_bound": tuba,
        "dv_gen_bound": dv,
        "estimator_bound": dv if estimator == "smile" else tuba,
    }
    if mc_trials:
        report["mc_rademacher_n"] = complexity.mc_rademacher(
            p, joint, cert_n.B, mc_trials, RngStream(seed, 2))
    return report


def cmd_bounds(critic_path, mi: float, delta: float, n: int, m: int, dim: Optional[int] = None,
               cubed: bool = False, seed: int = 0, probe: int = 1024, mc_trials: int = 0,
               out: Optional[str] = None) -> int:
    p, header = storage.load_critic(critic_path)
    report = bounds_report(p, header, mi, dim, cubed, delta, n, m, seed, probe, mc_trials)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if out:
        Path(out).write_text(text + "\n")
    return EXIT_OK


def cmd_gradcheck(seed: int = 0, tolerance: float = 1e-5) -> int:
    results = gradcheck.run_all(seed)
    failing = [r for r in results if not r.passed(tolerance)]
    width = max(len(r.component) for r in results)
    for r in results:
        status = "ok" if r.passed(tolerance) else "FAIL"
        print(f"{r.component:<{width}}  {r.max_rel_error:.3e}  {status}")
    if failing:
        print("failing components: " + ", ".join(r.component for r in failing), file=sys.stderr)
        return EXIT_ERROR
    print(f"all {len(results)} components below {tolerance:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rkhs-mi", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one critic along the MI schedule")
    p.add_argument("--config", help="JSON config (defaults are used when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("sweep", help="bias/variance/RMSE over estimators, batch sizes and weights")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int, help="parallel trials (env RKHS_MI_WORKERS)")

    p = sub.add_parser("bounds", help="generalization-bound audit of a saved critic")
    p.add_argument("--critic", required=True, help="critic.bin written by train")
    p.add_argument("--mi", type=float, required=True, help="true MI of the probe task, nats")
    p.add_argument("--dim", type=int, help="per-variable dimension (default: from critic)")
    p.add_argument("--cubed", action="store_true")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--probe", type=int, default=1024, help="probe rows for estimating M")
    p.add_argument("--mc-trials", type=int, default=0, help="also Monte-Carlo the Rademacher average")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the JSON report here")

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out, args.seed)
        if args.command == "sweep":
            return cmd_sweep(args.config, args.out, args.seed, args.trials, args.workers)
        if args.command == "bounds":
            return cmd_bounds(args.critic, args.mi, args.delta, args.n, args.m, args.dim,
                              args.cubed, args.seed, args.probe, args.mc_trials, args.out)
        return cmd_gradcheck(args.seed, args.tolerance)
    except (RkhsMiError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
