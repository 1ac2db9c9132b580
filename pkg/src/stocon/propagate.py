"""Time stepping for random maps and random ODEs.

Virtual displacements are carried as a unit direction plus an accumulated
log-norm, renormalized after every step. This keeps long contracting runs
(``||dz|| ~ exp(-10^4)``) representable; a true zero displacement is kept
as the zero vector with log-norm ``-inf``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Metric, NonFiniteError, make_metric_identity, state_vector
from .noise import NoisePath
from .spectral import (
    generalized_jacobian_continuous,
    generalized_jacobian_discrete,
    jacobian_fd,
    lambda_max_symmetric,
    largest_singular_value,
)

PROOF_SLACK = 1e-9


class PropagationError(RuntimeError):
    """Non-finite state during a run; carries where it happened."""

    def __init__(self, msg, step=None, time=None, seed=None, path_index=None):
        where = {"step": step, "t": time, "seed": seed, "path_index": path_index}
        detail = ", ".join(f"{k}={v}" for k, v in where.items() if v is not None)
        super().__init__(f"{msg} ({detail})" if detail else msg)
        self.step = step
        self.time = time
        self.seed = seed
        self.path_index = path_index


def fmt(v) -> str:
    """Shortest round-trip decimal form of a float."""
    return repr(float(v))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    log_dz: Optional[np.ndarray] = None
    seed: Optional[int] = None
    path_index: Optional[int] = None
    diagnostics: Mapping = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("trajectory times must be strictly increasing")
        if len(self.states) != t.size:
            raise ValueError("times and states differ in length")
        if self.log_dz is not None and len(self.log_dz) != t.size:
            raise ValueError("times and dz norms differ in length")
        if self.log_dz is not None and np.any(np.isposinf(self.log_dz)):
            raise ValueError("infinite dz norm")

    @property
    def dz_norms(self) -> np.ndarray:
        return np.exp(self.log_dz)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def write_csv(self, fh) -> None:
        n = self.states.shape[1]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{k + 1}" for k in range(n)] + ["dz_norm"])
        dz = self.dz_norms if self.log_dz is not None else [math.nan] * len(self.times)
        for t, x, z in zip(self.times, self.states, dz):
            w.writerow([fmt(t)] + [fmt(v) for v in x] + [fmt(z)])


@dataclass(frozen=True)
class EnvelopeSequence:
    """Z_{n+1} = exp(I_n) Z_n with Z_0 = ||dz_0||.

    ``Z`` follows the recursion literally (and may underflow to 0);
    ``log_Z`` is the same sequence in log form for comparisons.
    """

    Z: np.ndarray
    log_Z: np.ndarray
    integrals: np.ndarray


def envelope_sequence(cell_integrals: Sequence[float], z0: float) -> EnvelopeSequence:
    ints = np.asarray(cell_integrals, dtype=float).reshape(-1)
    if not np.all(np.isfinite(ints)):
        raise ValueError("cell integrals must be finite")
    if z0 < 0:
        raise ValueError("Z_0 is a norm and must be nonnegative")
    Z = np.empty(ints.size + 1)
    Z[0] = z0
    for k, v in enumerate(ints):
        Z[k + 1] = math.exp(v) * Z[k]
    if z0 > 0:
        log_Z = math.log(z0) + np.concatenate([[0.0], np.cumsum(ints)])
    else:
        log_Z = np.full(ints.size + 1, -math.inf)
    return EnvelopeSequence(Z, log_Z, ints)


# same recursion, driven by integrals of lambda_f over partition cells
discrete_envelope = envelope_sequence


def default_dz0(n: int, seed: int = 0, path_index: int = 0) -> np.ndarray:
    """Unit vector in a direction fixed by (seed, path_index)."""
    ss = np.random.SeedSequence(seed, spawn_key=(2**31 - 1, path_index))
    v = np.random.Generator(np.random.PCG64(ss)).standard_normal(n)
    return v / np.linalg.norm(v)


def _unit(dz):
    dz = np.asarray(dz, dtype=float).reshape(-1)
    if not np.all(np.isfinite(dz)):
        raise NonFiniteError("dz0 must be finite")
    nrm = float(np.linalg.norm(dz))
    if nrm == 0.0:
        return np.zeros_like(dz), -math.inf
    return dz / nrm, math.log(nrm)


def _save_indices(K: int, stride: int, extra=()) -> np.ndarray:
    if stride < 1:
        raise ValueError("save stride must be >= 1")
    idx = set(range(0, K + 1, stride))
    idx.add(K)
    idx.update(int(i) for i in extra)
    return np.array(sorted(i for i in idx if 0 <= i <= K), dtype=np.int64)


def step_discrete(sys, x, i: int, path: Optional[NoisePath]):
    xi = path(i) if path is not None else np.zeros(sys.noise_dim)
    out = np.asarray(sys.f(x, i, xi), dtype=float)
    if not np.all(np.isfinite(out)):
        raise PropagationError(
            "non-finite state", step=i, seed=getattr(path, "seed", None),
            path_index=getattr(path, "path_index", None),
        )
    return out


def _jac(sys, x, t, xi):
    if sys.jacobian is not None:
        return np.atleast_2d(np.asarray(sys.jacobian(x, t, xi), dtype=float))
    return jacobian_fd(sys.f, x, t, xi)


def propagate_variational_discrete(sys, metric: Optional[Metric], x0, dz0, steps: int,
                                   path: Optional[NoisePath], stride: int = 1,
                                   variational: bool = True) -> Trajectory:
    """Iterate x_{i+1} = f(x_i, i, xi_i) and dz_{i+1} = F_i dz_i.

    Every step also checks ||dz_{i+1}|| <= sigma_i ||dz_i|| (1 + 1e-9), with
    sigma_i the largest singular value of F_i; the violation count and the
    worst ratio land in ``diagnostics``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    metric = metric or make_metric_identity(sys.dim)
    x = np.array(state_vector(x0, sys.dim))
    seed = getattr(path, "seed", None)
    pidx = getattr(path, "path_index", None)
    noise = path.draws(0, steps) if path is not None else np.zeros((steps, sys.noise_dim))
    save = _save_indices(steps, stride)
    S = save.size
    states = np.empty((S, sys.dim))
    logs = np.empty(S)
    d, logacc = _unit(dz0 if dz0 is not None else default_dz0(sys.dim, seed or 0, pidx or 0))
    if d.size != sys.dim:
        raise ValueError("dz0 has the wrong dimension")
    violations = 0
    worst = 0.0
    s = 0
    if save[0] == 0:
        states[0], logs[0] = x, logacc
        s = 1
    for i in range(steps):
        xi = noise[i]
        if variational:
            J = _jac(sys, x, i, xi)
            if metric.is_identity:
                F = J
            else:
                F = generalized_jacobian_discrete(J, metric.theta(i), metric.theta(i + 1))
            sigma = largest_singular_value(F)
            d = F @ d
            nrm = math.sqrt(float(d @ d))
            if logacc != -math.inf:
                if nrm > sigma * (1.0 + PROOF_SLACK):
                    violations += 1
                if sigma > 0:
                    worst = max(worst, nrm / sigma)
                if nrm == 0.0:
                    logacc = -math.inf
                    d = np.zeros_like(d)
                else:
                    logacc += math.log(nrm)
                    d = d / nrm
        x = np.asarray(sys.f(x, i, xi), dtype=float)
        if not np.all(np.isfinite(x)):
            raise PropagationError("non-finite state", step=i + 1, seed=seed, path_index=pidx)
        if s < S and save[s] == i + 1:
            states[s], logs[s] = x, logacc
            s += 1
    return Trajectory(
        times=save.astype(float), states=states, log_dz=logs if variational else None,
        seed=seed, path_index=pidx,
        diagnostics={"proof_violations": violations, "max_proof_ratio": worst},
    )


def default_step(partitions: Sequence, T: float) -> float:
    h = 1e-2
    for part in partitions:
        if part is None:
            continue
        n = part.n_cells(T)
        shortest = min(part.length(k) for k in range(n))
        h = min(h, shortest / 50.0)
    return h


def step_grid(T: float, h: float, boundaries: Sequence[float] = ()) -> np.ndarray:
    """Fixed-step grid on [0, T] with every boundary in (0, T) as a node.

    Each segment between consecutive boundaries is split into
    ceil(length / h) equal steps, so no step straddles a boundary.
    """
    if not (T > 0 and h > 0):
        raise ValueError("horizon and step must be positive")
    knots = [0.0] + sorted({float(b) for b in boundaries if 0.0 < b < T}) + [float(T)]
    pieces = []
    for a, b in zip(knots[:-1], knots[1:]):
        k = max(1, int(math.ceil((b - a) / h - 1e-9)))
        seg = np.linspace(a, b, k + 1)
        pieces.append(seg if not pieces else seg[1:])
    return np.concatenate(pieces)


def step_cells(path: NoisePath, grid: np.ndarray) -> np.ndarray:
    """Partition cell used by each step of ``grid`` (looked up at midpoints)."""
    mid = 0.5 * (grid[:-1] + grid[1:])
    part = path.partition
    if part.cell is not None:
        return np.floor(mid / part.cell).astype(np.int64)
    return part.cell_indices(mid)


def step_noise(paths: Sequence[Optional[NoisePath]], grid: np.ndarray, noise_dim: int) -> np.ndarray:
    """Noise value held during each step; several paths are stacked by component."""
    K = grid.size - 1
    cols = []
    for path in paths:
        if path is None:
            continue
        if not path.is_coarse_grain:
            raise TypeError("continuous systems need coarse-grain noise paths")
        cells = step_cells(path, grid)
        cols.append(path.draws(0, int(cells.max()) + 1)[cells])
    if not cols:
        return np.zeros((K, noise_dim))
    out = np.concatenate(cols, axis=1)
    if out.shape[1] != noise_dim:
        raise ValueError(f"noise has {out.shape[1]} components, system expects {noise_dim}")
    return out


def _grid_for(paths, T, h):
    parts = [p.partition for p in paths if p is not None]
    if h is None:
        h = default_step(parts, T)
    bounds = set()
    for part in parts:
        bounds.update(part.boundaries_within(T))
    return step_grid(T, h, sorted(bounds)), sorted(bounds)


def _integrate(sys, metric, x0, dz0, grid, xis, save, seed, pidx, variational=True,
               check_growth=False):
    K = grid.size - 1
    x = np.array(state_vector(x0, sys.dim))
    d, logacc = _unit(dz0)
    if d.size != sys.dim:
        raise ValueError("dz0 has the wrong dimension")
    S = save.size
    states = np.empty((S, sys.dim))
    logs = np.empty(S)
    s = 0
    if save[0] == 0:
        states[0], logs[0] = x, logacc
        s = 1
    f = sys.f
    ident = metric.is_identity

    def gen(xs, ts, xi):
        J = _jac(sys, xs, ts, xi)
        if ident:
            return J
        return generalized_jacobian_continuous(J, metric.theta(ts), metric.theta_dot(ts))

    growth_violations = 0
    worst_growth = 0.0
    lam_int = np.empty(K) if check_growth else None
    for k in range(K):
        t = grid[k]
        h = grid[k + 1] - t
        xi = xis[k]
        th = t + 0.5 * h
        k1 = f(x, t, xi)
        x2 = x + 0.5 * h * k1
        k2 = f(x2, th, xi)
        x3 = x + 0.5 * h * k2
        k3 = f(x3, th, xi)
        x4 = x + h * k3
        k4 = f(x4, t + h, xi)
        if variational:
            F1, F2, F3, F4 = gen(x, t, xi), gen(x2, th, xi), gen(x3, th, xi), gen(x4, t + h, xi)
            l1 = F1 @ d
            l2 = F2 @ (d + 0.5 * h * l1)
            l3 = F3 @ (d + 0.5 * h * l2)
            l4 = F4 @ (d + h * l3)
            d = d + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
            if check_growth:
                lam = (h / 6.0) * (lambda_max_symmetric(F1) + 2.0 * lambda_max_symmetric(F2)
                                   + 2.0 * lambda_max_symmetric(F3) + lambda_max_symmetric(F4))
                lam_int[k] = lam
            nrm = math.sqrt(float(d @ d))
            if logacc == -math.inf or nrm == 0.0:
                logacc = -math.inf
                d = np.zeros_like(d)
            else:
                if check_growth:
                    ratio = nrm / (math.exp(lam) * (1.0 + 10.0 * h * h))
                    worst_growth = max(worst_growth, ratio)
                    if ratio > 1.0:
                        growth_violations += 1
                logacc += math.log(nrm)
                d = d / nrm
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise PropagationError("non-finite state", step=k + 1, time=float(grid[k + 1]),
                                   seed=seed, path_index=pidx)
        if s < S and save[s] == k + 1:
            states[s], logs[s] = x, logacc
            s += 1
    diag = {}
    if check_growth:
        diag = {"growth_violations": growth_violations, "max_growth_ratio": worst_growth,
                "lambda_step_integrals": lam_int, "grid": grid}
    return Trajectory(grid[save], states, logs if variational else None, seed, pidx, diag)


def integrate_continuous(sys, metric: Optional[Metric], x0, dz0, T: float, h: Optional[float] = None,
                         path: Optional[NoisePath] = None, stride: int = 1,
                         paths: Optional[Sequence[NoisePath]] = None,
                         check_growth: bool = False) -> Trajectory:
    """Fixed-step RK4 on the joint system (dx = f dt, d dz = F dz dt).

    The grid is refined so every noise-cell boundary in (0, T) is a node;
    those nodes are always saved, in addition to every ``stride``-th step.
    Pass ``paths`` instead of ``path`` when the noise components come from
    several independent paths (they are stacked in order).
    """
    metric = metric or make_metric_identity(sys.dim)
    ps = list(paths) if paths is not None else [path]
    grid, bounds = _grid_for(ps, T, h)
    xis = step_noise(ps, grid, sys.noise_dim)
    bidx = np.searchsorted(grid, bounds)
    save = _save_indices(grid.size - 1, stride, bidx)
    first = next((p for p in ps if p is not None), None)
    seed = getattr(first, "seed", None)
    pidx = getattr(first, "path_index", None)
    if dz0 is None:
        dz0 = default_dz0(sys.dim, seed or 0, pidx or 0)
    return _integrate(sys, metric, x0, dz0, grid, xis, save, seed, pidx, check_growth=check_growth)


def propagate_pair(sys, x0a, x0b, horizon, path: Optional[NoisePath] = None,
                   path_b: Optional[NoisePath] = None, h: Optional[float] = None,
                   metric: Optional[Metric] = None, stride: int = 1, variational: bool = False):
    """Run two trajectories on a shared grid.

    Both use ``path`` unless ``path_b`` is given. ``horizon`` is a step count
    for discrete systems and a time for continuous ones. Returns
    ``(traj_a, traj_b, separation)`` with separation ||x_a - x_b|| at the
    saved times.
    """
    x0a = state_vector(x0a, sys.dim)
    x0b = state_vector(x0b, sys.dim)
    pb = path_b if path_b is not None else path
    if sys.continuous:
        metric = metric or make_metric_identity(sys.dim)
        grid, bounds = _grid_for([path, pb], horizon, h)
        save = _save_indices(grid.size - 1, stride, np.searchsorted(grid, bounds))
        dz0 = default_dz0(sys.dim)
        ta = _integrate(sys, metric, x0a, dz0, grid, step_noise([path], grid, sys.noise_dim), save,
                        getattr(path, "seed", None), getattr(path, "path_index", None), variational)
        tb = _integrate(sys, metric, x0b, dz0, grid, step_noise([pb], grid, sys.noise_dim), save,
                        getattr(pb, "seed", None), getattr(pb, "path_index", None), variational)
    else:
        steps = int(horizon)
        ta = propagate_variational_discrete(sys, metric, x0a, None, steps, path, stride, variational)
        tb = propagate_variational_discrete(sys, metric, x0b, None, steps, pb, stride, variational)
    sep = np.linalg.norm(ta.states - tb.states, axis=1)
    return ta, tb, sep
