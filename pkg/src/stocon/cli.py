"""Command-line experiment runner.

    stocon run CONFIG [--out DIR] [--seed N] [--paths P] [--threads T]
    stocon list-scenarios

Exit status: 0 when every requested verdict holds, 2 when any is false,
1 on a configuration or execution error.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis as an
from .config import SCENARIO_PARAMS, ConfigError, ExperimentConfig, _floats, parse_config
from .ensemble import resolve_threads, run_ensemble
from .propagate import PropagationError, fmt
from .scenarios import (
    SCENARIOS,
    cubic_additive,
    linear_random_gain,
    linear_random_rate,
    quadratic_objective,
    stochastic_gradient,
    vdp_coupled,
)


@dataclass
class Built:
    system: object
    x0: np.ndarray
    x0b: object = None
    extra: dict = field(default_factory=dict)


def _hessian(text: str):
    if ";" in text:
        rows = [_floats(r) for r in text.split(";") if r.strip()]
        if len({len(r) for r in rows}) != 1:
            raise ConfigError("params.hessian: ragged matrix")
        return np.array(rows)
    return np.diag(_floats(text))


def build_scenario(cfg: ExperimentConfig) -> Built:
    p = cfg.params
    try:
        if cfg.scenario == "linear_random_gain":
            return Built(linear_random_gain(cfg.dist), np.array(_floats(p["x0"])))
        if cfg.scenario == "stochastic_gradient":
            H = _hessian(p["hessian"])
            sysm, report = stochastic_gradient(quadratic_objective(H), float(p["mu"]), cfg.dist,
                                               H.shape[0], seed=cfg.seed)
            return Built(sysm, np.array(_floats(p["x0"])), np.array(_floats(p["x0b"])),
                         {"condition": report})
        if cfg.scenario == "linear_random_rate":
            return Built(linear_random_rate(cfg.dist, cfg.partition), np.array(_floats(p["x0"])))
        if cfg.scenario == "cubic_additive":
            dim = int(p["dim"])
            sysm = cubic_additive(float(p["c1"]), float(p["c3"]), dim, cfg.dist, cfg.cell or 0.1)
            if cfg.cell is None:
                raise ConfigError("cubic_additive needs noise.cell")
            x0 = np.array(_floats(p["x0"]))
            x0b = x0 if p["x0b"].strip() == "x0" else np.array(_floats(p["x0b"]))
            if x0.size == 1 and dim > 1:
                x0 = np.full(dim, x0[0])
            if x0b.size == 1 and dim > 1:
                x0b = np.full(dim, x0b[0])
            return Built(sysm, x0, x0b)
        if cfg.scenario == "vdp_coupled":
            if cfg.cell is None:
                raise ConfigError("vdp_coupled needs noise.cell")
            sysm = vdp_coupled(float(p["alpha"]), float(p["w"]), cfg.dist, cfg.dist2, cfg.cell)
            return Built(sysm, np.array(_floats(p["x0"])))
    except (ValueError, KeyError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"params: {e}") from None
    raise ConfigError(f"unknown scenario {cfg.scenario!r}")  # pragma: no cover


@dataclass
class RunReport:
    config: ExperimentConfig
    rows: list            # (analysis, Row)
    notes: list
    wall_clock: float
    files: dict           # name -> text
    backend: str = ""

    @property
    def all_pass(self) -> bool:
        return all(r.verdict for _, r in self.rows)

    @property
    def exit_code(self) -> int:
        return 0 if self.all_pass else 2


def _csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _ensemble_csv(ens):
    P = ens.paths
    with np.errstate(over="ignore"):
        sq = np.exp(2.0 * ens.log_dz)
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.zeros_like(mean)
    sep = ens.separation
    rows = [["t", "mean_dz_norm_sq", "se", "mean_sep", "se_sep"]]
    if sep is not None:
        ms = sep.mean(axis=0)
        ss = sep.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.zeros_like(ms)
    for k, t in enumerate(ens.times):
        row = [fmt(t), fmt(mean[k]), fmt(se[k])]
        row += [fmt(ms[k]), fmt(ss[k])] if sep is not None else ["", ""]
        rows.append(row)
    return _csv(rows)


def _lyapunov(cfg, ens):
    slopes = np.array([an.finite_time_lyapunov(ens.log_dz[p], cfg.lyap_tail, times=ens.times).slope
                       for p in range(ens.paths)])
    if ens.paths > 1 and np.all(np.isfinite(slopes)):
        m, se, lo, hi = (float(v) for v in an._mean_ci(slopes))
    else:
        # one path, or some path reached dz = 0 (slope -inf)
        m, lo, hi = float(slopes.mean()), float(slopes.min()), float(slopes.max())
    return an.Row("lyapunov slope", m, lo, hi, 0.0, hi < 0.0)


def run_experiment(cfg: ExperimentConfig, threads=None) -> RunReport:
    t_start = time.time()
    built = build_scenario(cfg)
    sysm = built.system
    wants = set(cfg.analyses)
    pair = built.x0b is not None and (wants & {"deviation-bound", "mean-decay"} or
                                      cfg.scenario == "stochastic_gradient")
    horizon = cfg.time if cfg.continuous else cfg.steps
    ens = run_ensemble(sysm, built.x0, horizon, cfg.paths, cfg.seed,
                       x0b=built.x0b if pair else None,
                       independent_b="deviation-bound" in wants, h=cfg.h, stride=cfg.stride,
                       threads=threads)
    rows, notes = [], []

    def add(name, items):
        for r in items:
            rows.append((name, r))

    for a in cfg.analyses:
        if a == "lyapunov":
            add(a, [_lyapunov(cfg, ens)])
        elif a == "t1":
            with np.errstate(divide="ignore"):
                v = an.check_T1_discrete(np.log(ens.eta), cfg.etas.get("t1"))
            add(a, v.rows())
            notes.append(f"t1: {v.diagnostics['mode']}, pooled mean {v.diagnostics['pooled_mean']!r}")
        elif a == "t2":
            v = an.check_T2_discrete(ens.eta ** 2, cfg.etas.get("t2"))
            add(a, v.rows())
            notes.append(f"t2: {v.diagnostics['mode']}, pooled mean {v.diagnostics['pooled_mean']!r}")
        elif a == "t3":
            v = an.check_T3_continuous(ens.eta, ens.cell_lengths, cfg.etas.get("t3"))
            add(a, v.rows())
            notes.append(f"t3: {v.diagnostics['mode']}")
        elif a == "t4":
            v = an.check_T4_coarse_grain(ens.eta, cfg.etas.get("t4"),
                                         log_dz_cells=ens.log_dz[:, ens.boundary_rows])
            add(a, v.rows())
            viol = v.diagnostics["envelope_violations"]
            add(a, [an.Row("envelope violations", float(viol), float(viol), float(viol), 0.0, viol == 0)])
            notes.append(f"t4: {v.diagnostics['mode']}, pooled mean {v.diagnostics['pooled_mean']!r}")
        elif a == "ms-rate":
            r = an.ms_rate_fit(ens.log_dz, ens.times, seed=cfg.seed)
            add(a, r.rows("mean-square rate", 1.0))
        elif a == "mean-trajectory":
            r = an.mean_trajectory_test(sysm, built.x0, cfg.time, cfg.paths, cfg.seed, h=cfg.h,
                                        stride=cfg.stride, threads=threads, ensemble=ens)
            add(a, r.rows())
        elif a == "deviation-bound":
            r = an.deviation_bound_test(sysm, built.x0, built.x0b, cfg.time, cfg.paths, cfg.seed,
                                        ensemble=ens)
            add(a, r.rows())
        elif a == "sync":
            r = an.synchronization(ens.times, ens.states, cfg.sync_tail, cfg.sync_threshold,
                                   predicted=sysm.meta["sync_predicted"],
                                   min_fraction=cfg.sync_min_fraction)
            add(a, r.rows())
            notes.append(f"sync: predicted {r.predicted} (E eps1 + E eps2 = "
                         f"{sysm.meta['coupling_mean_sum']!r})")
        elif a == "mean-decay":
            r = an.mean_decay_fit(ens.times, ens.states - ens.states_b)
            rep = built.extra["condition"]
            add(a, [an.Row("mean decay factor", r.rate, r.ci[0], r.ci[1], 1.0, r.ci[1] < 1.0)])
            add(a, [an.Row("predicted factor max|1 - mu sigma^2 lambda_k|", rep.spectral_radius,
                           rep.spectral_radius, rep.spectral_radius, 1.0, rep.holds)])
    if "condition" in built.extra:
        rep = built.extra["condition"]
        notes.append(f"gradient condition: mu*sigma^2 = {rep.mu_sigma2!r}, convex = {rep.convex}, "
                     f"mu*sigma^2*lambda_max < 1: {rep.sufficient_condition}, spectral radius "
                     f"{rep.spectral_radius!r}, diverges = {rep.diverges}")

    files = {}
    if cfg.trajectories:
        buf = io.StringIO()
        ens.trajectory(0).write_csv(buf)
        files["trajectories.csv"] = buf.getvalue()
    files["ensemble.csv"] = _ensemble_csv(ens)
    vrows = [["analysis", "quantity", "estimate", "ci_lo", "ci_hi", "threshold", "verdict"]]
    for name, r in rows:
        vrows.append([name, r.quantity, fmt(r.estimate), fmt(r.ci_lo), fmt(r.ci_hi), fmt(r.threshold),
                      "true" if r.verdict else "false"])
    files["verdicts.csv"] = _csv(vrows)
    if ens.proof_violations:
        notes.append(f"per-step proof inequality violated {ens.proof_violations} times")
    return RunReport(cfg, rows, notes, time.time() - t_start, files, ens.backend)


def _report_text(rep: RunReport) -> str:
    lines = ["# configuration (resolved)"] + rep.config.echo()
    lines += ["", "# results"]
    for name, r in rep.rows:
        lines.append(f"{name}: {r.quantity} = {r.estimate!r} "
                     f"[{r.ci_lo!r}, {r.ci_hi!r}] threshold {r.threshold!r} -> "
                     f"{'PASS' if r.verdict else 'FAIL'}")
    if rep.notes:
        lines += ["", "# notes"] + rep.notes
    lines += ["", f"backend: {rep.backend}",
              f"wall clock: {rep.wall_clock:.3f} s",
              f"finished: {time.strftime('%Y-%m-%dT%H:%M:%S')}",
              "files: " + ", ".join(sorted(list(rep.files) + ["report.txt"])),
              f"exit code: {rep.exit_code}"]
    return "\n".join(lines) + "\n"


def write_outputs(rep: RunReport, out_dir: str) -> None:
    """Write every output through a temp file and an atomic rename."""
    os.makedirs(out_dir, exist_ok=True)
    files = dict(rep.files)
    files["report.txt"] = _report_text(rep)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, os.path.join(out_dir, name)))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def _list_scenarios(out) -> None:
    for name, spec in SCENARIOS.items():
        out.write(f"{name} ({spec.kind})\n    {spec.description}\n")
        for k in sorted(SCENARIO_PARAMS[name]):
            out.write(f"    params.{k} = {spec.params.get(k, '')}\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stocon", description="Contraction experiments for random systems.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--seed", type=int, help="master seed (overrides ensemble.seed)")
    r.add_argument("--paths", type=int, help="ensemble size (overrides ensemble.paths)")
    r.add_argument("--threads", type=int, help="worker threads (default: $STOCON_THREADS or CPU count)")
    sub.add_parser("list-scenarios", help="list scenario builders and their parameters")
    args = ap.parse_args(argv)
    if args.cmd == "list-scenarios":
        _list_scenarios(sys.stdout)
        return 0
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"--seed: must be an unsigned 64-bit integer, got {args.seed}")
            cfg.seed = args.seed
        if args.paths is not None:
            if args.paths < 1:
                raise ConfigError(f"--paths: must be >= 1, got {args.paths}")
            cfg.paths = args.paths
        if args.out is not None:
            cfg.out_dir = args.out
        threads = resolve_threads(args.threads)
        rep = run_experiment(cfg, threads)
        write_outputs(rep, cfg.out_dir)
    except (ConfigError, PropagationError, ValueError, OSError) as e:
        print(f"stocon: error: {e}", file=sys.stderr)
        return 1
    for name, row in rep.rows:
        print(f"{name}: {row.quantity} = {row.estimate!r} -> {'PASS' if row.verdict else 'FAIL'}")
    return rep.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
