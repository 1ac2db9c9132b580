"""Monte Carlo ensembles: many paths of one system, reproducibly.

Path p always uses noise ``spec.path(seed, p, stream)``; the partner run of
a pair uses stream 0 (shared noise) or stream 1 (independent noise). Paths
are processed in fixed chunks of ``CHUNK`` indices and reassembled in index
order, so results do not depend on the number of worker threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .core import make_metric_identity, state_vector
from .propagate import (
    PropagationError,
    Trajectory,
    _integrate,
    _save_indices,
    default_dz0,
    default_step,
    propagate_variational_discrete,
    step_grid,
)

CHUNK = 64


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get("STOCON_THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return threads


@dataclass
class EnsembleResult:
    times: np.ndarray
    states: np.ndarray          # (P, S, n)
    log_dz: np.ndarray          # (P, S)
    seed: int
    backend: str
    proof_violations: int = 0
    eta: Optional[np.ndarray] = None            # (P, N) bound samples or (P, C) cell integrals
    cell_lengths: Optional[np.ndarray] = None   # (C,) continuous only
    boundary_rows: Optional[np.ndarray] = None  # rows of ``times`` at t_0 .. t_C
    states_b: Optional[np.ndarray] = None

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    @property
    def separation(self) -> Optional[np.ndarray]:
        if self.states_b is None:
            return None
        return np.sqrt(np.sum((self.states - self.states_b) ** 2, axis=2))

    def trajectory(self, p: int = 0) -> Trajectory:
        return Trajectory(self.times, self.states[p], self.log_dz[p], self.seed, p)


class _Context:
    pass


def _kernel_model(system, metric, backend):
    k = system.kernel
    if k is None or not metric.is_identity or backend == "generic":
        return None
    if system.continuous and k.model in kernels.MODELS:
        return k.model
    if not system.continuous and k.model == "gain":
        return k.model
    return None


def _dz0s(ctx, p0, p1):
    if ctx.dz0 is not None:
        return np.tile(ctx.dz0, (p1 - p0, 1))
    return np.stack([default_dz0(ctx.n, ctx.seed, p) for p in range(p0, p1)])


def _check_finite(ctx, st, p0):
    # the kernel only keeps saved rows; an overflow persists, so the first
    # non-finite saved row brackets the step where it happened
    bad = ~np.all(np.isfinite(st), axis=2)
    if bad.any():
        q = int(np.argmax(bad.any(axis=1)))
        row = int(np.argmax(bad[q]))
        raise PropagationError("non-finite state", step=int(ctx.save[row]), seed=ctx.seed,
                               path_index=p0 + q)


def _discrete_chunk(ctx, p0, p1):
    sysm, N, m = ctx.system, ctx.horizon, ctx.system.noise_dim
    Pc = p1 - p0
    spec = sysm.noise

    def noise_for(stream):
        if ctx.zero_noise or spec is None:
            return np.zeros((Pc, N, m)), [None] * Pc
        ps = [spec.path(ctx.seed, p, stream) for p in range(p0, p1)]
        return np.stack([q.draws(0, N) for q in ps]) if N > 0 else np.zeros((Pc, 0, m)), ps

    noise, paths = noise_for(0)
    out = {}
    if sysm.eta_bound is not None:
        out["eta"] = np.asarray(sysm.eta_bound(noise), dtype=float).reshape(Pc, N)
    dz0 = _dz0s(ctx, p0, p1)
    x0 = np.tile(ctx.x0, (Pc, 1))
    if ctx.model is not None:
        st, ld, viol = kernels.gain_iterate(noise[..., 0], x0, dz0, ctx.save, backend_name=ctx.kb)
        _check_finite(ctx, st, p0)
        out.update(states=st, log_dz=ld, viol=int(viol.sum()))
    else:
        trs = [propagate_variational_discrete(sysm, ctx.metric, ctx.x0, dz0[q], N, paths[q], ctx.stride)
               for q in range(Pc)]
        out.update(states=np.stack([t.states for t in trs]), log_dz=np.stack([t.log_dz for t in trs]),
                   viol=sum(t.diagnostics["proof_violations"] for t in trs))
    if ctx.x0b is not None:
        if ctx.independent_b:
            noise, paths = noise_for(1)
        x0b = np.tile(ctx.x0b, (Pc, 1))
        if ctx.model is not None:
            st, _, _ = kernels.gain_iterate(noise[..., 0], x0b, dz0, ctx.save, backend_name=ctx.kb)
            _check_finite(ctx, st, p0)
        else:
            st = np.stack([propagate_variational_discrete(sysm, ctx.metric, ctx.x0b, None, N, paths[q],
                                                          ctx.stride, variational=False).states
                           for q in range(Pc)])
        out["states_b"] = st
    return out


def _continuous_chunk(ctx, p0, p1):
    sysm, m = ctx.system, ctx.system.noise_dim
    Pc = p1 - p0
    spec = sysm.noise

    def cells_for(stream):
        if ctx.zero_noise or spec is None:
            return np.zeros((Pc, ctx.n_cells, m))
        return np.stack([spec.path(ctx.seed, p, stream).draws(0, ctx.n_cells) for p in range(p0, p1)])

    def run(x0, cv, dz0, variational=True):
        if ctx.model is not None:
            st, ld, bad = kernels.rk4(ctx.model, ctx.params, ctx.grid, ctx.step_cell, cv,
                                      np.tile(x0, (Pc, 1)), dz0, ctx.save, backend_name=ctx.kb)
            for q in range(Pc):
                if bad[q] >= 0:
                    raise PropagationError("non-finite state", step=int(bad[q]),
                                           time=float(ctx.grid[bad[q]]), seed=ctx.seed,
                                           path_index=p0 + q)
            return st, ld
        trs = [_integrate(sysm, ctx.metric, x0, dz0[q], ctx.grid, cv[q][ctx.step_cell], ctx.save,
                          ctx.seed, p0 + q, variational) for q in range(Pc)]
        ld = np.stack([t.log_dz for t in trs]) if variational else None
        return np.stack([t.states for t in trs]), ld

    cv = cells_for(0)
    dz0 = _dz0s(ctx, p0, p1)
    out = {}
    st, ld = run(ctx.x0, cv, dz0)
    out.update(states=st, log_dz=ld, viol=0)
    if sysm.eta_bound is not None and ctx.n_full > 0:
        vals = np.asarray(sysm.eta_bound(cv[:, :ctx.n_full]), dtype=float).reshape(Pc, ctx.n_full)
        out["eta"] = vals * ctx.lengths[None, :]
    if ctx.x0b is not None:
        cvb = cells_for(1) if ctx.independent_b else cv
        out["states_b"], _ = run(ctx.x0b, cvb, dz0, variational=ctx.model is not None)
    return out


def _prepare_continuous(ctx, T, h, stride):
    sysm = ctx.system
    part = sysm.noise.partition if sysm.noise is not None else None
    if sysm.noise is not None and part is None:
        raise ValueError("continuous systems need a coarse-grain partition")
    if h is None:
        h = default_step([part], T)
    bounds = part.boundaries_within(T) if part is not None else []
    grid = step_grid(T, h, bounds)
    K = grid.size - 1
    if part is not None:
        mid = 0.5 * (grid[:-1] + grid[1:])
        sc = np.floor(mid / part.cell).astype(np.int64) if part.cell is not None else part.cell_indices(mid)
        tol = 1e-9 * max(1.0, T)
        n_full = 0
        while part.boundary(n_full + 1) <= T + tol:
            n_full += 1
        knots = np.array([part.boundary(k) for k in range(n_full + 1)])
        lengths = np.diff(knots)
    else:
        sc = np.zeros(K, dtype=np.int64)
        n_full, knots, lengths = 0, np.array([0.0]), np.empty(0)
    ctx.grid, ctx.step_cell = grid, sc
    ctx.n_cells = int(sc.max()) + 1
    ctx.n_full, ctx.lengths = n_full, lengths
    if stride is None:
        stride = max(1, K // 2000)
    rows = np.minimum(np.searchsorted(grid, knots - 1e-9 * max(1.0, T)), K)
    ctx.save = _save_indices(K, stride, rows)
    ctx.stride = stride
    ctx.times = grid[ctx.save]
    ctx.boundary_rows = np.searchsorted(ctx.save, rows)


def run_ensemble(system, x0, horizon, paths: int, seed: int = 0, *, x0b=None,
                 independent_b: bool = False, h: Optional[float] = None,
                 stride: Optional[int] = None, dz0=None, threads: Optional[int] = None,
                 metric=None, backend: Optional[str] = None, zero_noise: bool = False
                 ) -> EnsembleResult:
    """Run ``paths`` independent realizations (path indices 0..paths-1).

    ``horizon`` is a step count for discrete systems and a time for
    continuous ones. ``backend`` is ``"cython"``, ``"python"`` (kernel
    implementations), ``"generic"`` (per-path reference engine) or None
    (fastest available). ``x0b`` adds a partner trajectory per path.
    """
    if paths < 1:
        raise ValueError("need at least one path")
    ctx = _Context()
    ctx.system, ctx.seed, ctx.zero_noise = system, int(seed), zero_noise
    ctx.n = system.dim
    ctx.metric = metric or make_metric_identity(system.dim)
    ctx.x0 = np.array(state_vector(x0, system.dim))
    ctx.x0b = None if x0b is None else np.array(state_vector(x0b, system.dim))
    ctx.independent_b = independent_b
    ctx.dz0 = None if dz0 is None else np.asarray(dz0, dtype=float).reshape(system.dim)
    ctx.model = _kernel_model(system, ctx.metric, backend)
    ctx.kb = backend if backend in ("cython", "python") else None
    ctx.params = np.asarray(system.kernel.params if system.kernel else (), dtype=float)
    if system.continuous:
        T = float(horizon)
        if not T > 0:
            raise ValueError("horizon must be positive")
        _prepare_continuous(ctx, T, h, stride)
        work = _continuous_chunk
    else:
        N = int(horizon)
        if N < 1:
            raise ValueError("step count must be >= 1")
        ctx.horizon = N
        ctx.stride = stride if stride is not None else max(1, N // 5000)
        ctx.save = _save_indices(N, ctx.stride)
        ctx.times = ctx.save.astype(float)
        ctx.boundary_rows = None
        work = _discrete_chunk

    chunks = [(p, min(p + CHUNK, paths)) for p in range(0, paths, CHUNK)]
    nthreads = min(resolve_threads(threads), len(chunks))
    if nthreads == 1:
        results = [work(ctx, a, b) for a, b in chunks]
    else:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(lambda c: work(ctx, *c), chunks))

    def cat(key):
        if key not in results[0]:
            return None
        return np.concatenate([r[key] for r in results], axis=0)

    if ctx.model is not None:
        used = ctx.kb or kernels.BACKEND
    else:
        used = "generic"
    return EnsembleResult(
        times=ctx.times, states=cat("states"), log_dz=cat("log_dz"), seed=ctx.seed, backend=used,
        proof_violations=sum(r["viol"] for r in results), eta=cat("eta"),
        cell_lengths=getattr(ctx, "lengths", None) if system.continuous else None,
        boundary_rows=ctx.boundary_rows, states_b=cat("states_b"),
    )
