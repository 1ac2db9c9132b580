"""Builders for the concrete random systems used in experiments and tests.

Each builder returns a system carrying its noise recipe (``system.noise``),
an x-independent bound on the contraction rate where one exists
(``system.eta_bound``, vectorized over leading axes of the noise value) and,
when a compiled vector field exists, a ``KernelSpec``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ContinuousSystem, DiscreteSystem, KernelSpec
from .noise import Distribution, NoisePath, NoiseSpec, Partition, check_zero_mean, uniform
from .spectral import jacobi_eigenvalues, jacobian_fd, lambda_max_symmetric


# --- discrete benchmarks ----------------------------------------------------

def linear_random_gain(dist: Distribution) -> DiscreteSystem:
    """x_{i+1} = a_i x_i with a_i iid from ``dist``; sigma_f = |a_i|."""

    def f(x, i, xi):
        return xi[0] * x

    def jac(x, i, xi):
        return np.array([[xi[0]]])

    return DiscreteSystem(
        dim=1, f=f, jacobian=jac, noise_dim=1, name="linear_random_gain",
        eta_bound=lambda xi: np.abs(np.asarray(xi)[..., 0]),
        noise=NoiseSpec((dist,)),
        kernel=KernelSpec("gain"),
        meta={"E_log_eta": dist.mean_log_abs, "E_eta_sq": dist.second_moment},
    )


@dataclass(frozen=True)
class Objective:
    value: Callable[[np.ndarray], float]
    hessian: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    quadratic: bool = False


def quadratic_objective(H) -> Objective:
    """E(P) = P^T H P / 2."""
    H = np.array(H, dtype=float)
    if H.ndim == 1:
        H = np.diag(H)
    if not np.allclose(H, H.T):
        raise ValueError("Hessian must be symmetric")
    H.flags.writeable = False
    return Objective(
        value=lambda P: 0.5 * float(P @ H @ P),
        hessian=lambda P: H,
        gradient=lambda P: H @ P,
        quadratic=True,
    )


@dataclass
class GradientConditionReport:
    """Outcome of the mean-square contraction test for the stochastic gradient.

    ``sufficient_condition`` reports mu*sigma^2*lambda_max(H) < 1. ``spectral_radius`` is max |1 - mu*sigma^2*lambda_k|
    over Hessian eigenvalues and probes; the expected perturbation contracts
    exactly when it is below 1, which is what ``holds`` reports (together
    with strict convexity).
    """

    mu_sigma2: float
    convex: bool
    min_hessian_eig: float
    max_hessian_eig: float
    sufficient_condition: bool
    spectral_radius: float
    factor_matrix: np.ndarray
    holds: bool
    diverges: bool
    max_offdiag_corr: float
    uncorrelated: bool


def stochastic_gradient(objective: Objective, mu: float, pi_dist: Distribution, dim: int,
                        probes: Optional[Sequence] = None, seed: int = 0,
                        n_check: int = 10_000):
    """P_{n+1} = P_n - mu (E(P_n + Pi) - E(P_n)) Pi with Pi iid per component.

    Returns ``(system, report)``.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    check_zero_mean(pi_dist)
    sigma2 = pi_dist.second_moment
    probes = [np.zeros(dim)] if probes is None else [np.asarray(p, dtype=float) for p in probes]

    draws = NoisePath((pi_dist,) * dim, seed, 0, stream=7).draws(0, n_check)
    if dim > 1:
        corr = np.corrcoef(draws, rowvar=False)
        max_corr = float(np.max(np.abs(corr - np.diag(np.diag(corr)))))
    else:
        max_corr = 0.0

    mins, maxs, radius = math.inf, -math.inf, 0.0
    factor = None
    for p in probes:
        H = np.atleast_2d(np.asarray(objective.hessian(p), dtype=float))
        if not np.all(np.isfinite(H)):
            raise ValueError("non-finite Hessian at probe")
        ev = jacobi_eigenvalues(0.5 * (H + H.T))
        mins, maxs = min(mins, ev[0]), max(maxs, ev[-1])
        r = float(np.max(np.abs(1.0 - mu * sigma2 * ev)))
        if factor is None or r > radius:
            factor = np.eye(dim) - mu * sigma2 * H
        radius = max(radius, r)
    report = GradientConditionReport(
        mu_sigma2=mu * sigma2, convex=mins > 0, min_hessian_eig=mins, max_hessian_eig=maxs,
        sufficient_condition=mu * sigma2 * maxs < 1.0, spectral_radius=radius, factor_matrix=factor,
        holds=bool(mins > 0 and radius < 1.0), diverges=radius > 1.0,
        max_offdiag_corr=max_corr, uncorrelated=max_corr < 0.05,
    )

    value = objective.value

    def f(P, i, Pi):
        diff = value(P + Pi) - value(P)
        if not math.isfinite(diff):
            raise ValueError("non-finite objective value")
        return P - mu * diff * Pi

    jac = None
    if objective.gradient is not None:
        grad = objective.gradient

        def jac(P, i, Pi):
            return np.eye(dim) - mu * np.outer(Pi, grad(P + Pi) - grad(P))

    eta_bound = None
    if objective.quadratic:
        H0 = np.atleast_2d(objective.hessian(np.zeros(dim)))

        def eta_bound(Pi):
            Pi = np.asarray(Pi, dtype=float)
            flat = Pi.reshape(-1, dim)
            out = np.empty(flat.shape[0])
            for k, v in enumerate(flat):
                M = np.eye(dim) - mu * np.outer(v, H0 @ v)
                out[k] = math.sqrt(max(jacobi_eigenvalues(M.T @ M)[-1], 0.0))
            return out.reshape(Pi.shape[:-1])

    system = DiscreteSystem(
        dim=dim, f=f, jacobian=jac, noise_dim=dim, name="stochastic_gradient",
        eta_bound=eta_bound, noise=NoiseSpec((pi_dist,) * dim),
        meta={"mu": mu, "sigma2": sigma2, "predicted_factor": radius},
    )
    return system, report


# --- continuous benchmarks --------------------------------------------------

def linear_random_rate(dist: Distribution, partition: Partition) -> ContinuousSystem:
    """dx/dt = gamma_t x with gamma_t piecewise constant (coarse-grain independent).

    lambda_f = gamma_t exactly, so the bounding process is gamma itself.
    """

    def f(x, t, xi):
        return xi[0] * x

    def jac(x, t, xi):
        return np.array([[xi[0]]])

    meta = {"E_eta": dist.mean}
    if partition.cell is not None:
        meta["E_exp2_cell"] = dist.mgf(2.0 * partition.cell)
    return ContinuousSystem(
        dim=1, f=f, jacobian=jac, noise_dim=1, name="linear_random_rate",
        eta_bound=lambda xi: np.asarray(xi)[..., 0],
        noise=NoiseSpec((dist,), partition),
        kernel=KernelSpec("gain"),
        meta=meta,
    )


def vdp_jacobian(x, alpha, w, e1, e2):
    x1, v1, x2, v2 = x
    a = alpha
    return np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-2 * a * x1 * v1 - w * w, -a * (x1 * x1 - 1) - a * e1, 0.0, a * e1],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, a * e2, -2 * a * x2 * v2 - w * w, -a * (x2 * x2 - 1) - a * e2],
    ])


def vdp_coupled(alpha: float = 1.0, w: float = 1.0, eps1: Distribution | None = None,
                eps2: Distribution | None = None, cell: float = 0.05) -> ContinuousSystem:
    """Two Van der Pol oscillators coupled through their velocities.

    State (x1, x1', x2, x2'); the coupling gains eps1, eps2 are independent
    coarse-grain processes with cell length ``cell``.
    """
    if not (alpha > 0 and w > 0):
        raise ValueError("alpha and w must be positive")
    eps1 = eps1 if eps1 is not None else uniform(1.0, 1.0)
    eps2 = eps2 if eps2 is not None else eps1
    a, w2 = float(alpha), float(w) ** 2

    def f(x, t, xi):
        x1, v1, x2, v2 = x
        return np.array([
            v1,
            -a * (x1 * x1 - 1.0) * v1 - w2 * x1 + a * xi[0] * (v2 - v1),
            v2,
            -a * (x2 * x2 - 1.0) * v2 - w2 * x2 + a * xi[1] * (v1 - v2),
        ])

    def jac(x, t, xi):
        return vdp_jacobian(x, a, w, xi[0], xi[1])

    total = eps1.mean + eps2.mean
    return ContinuousSystem(
        dim=4, f=f, jacobian=jac, noise_dim=2, name="vdp_coupled",
        noise=NoiseSpec((eps1, eps2), Partition(cell=cell)),
        kernel=KernelSpec("vdp", (a, float(w))),
        meta={"alpha": a, "w": float(w), "coupling_mean_sum": total, "sync_predicted": total > 1.0},
    )


def sync_predicted(system: ContinuousSystem) -> bool:
    return bool(system.meta["coupling_mean_sum"] > 1.0)


def probe_lambda_max(jacobian, dim: int, box=(-3.0, 3.0), n_probes: int = 256, seed: int = 0,
                     t: float = 0.0):
    """Largest lambda_max of the symmetrized Jacobian over random points of a box.

    Returns ``(lambda_max, argmax_point)``.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(11,))))
    lo, hi = box
    pts = rng.uniform(lo, hi, size=(n_probes, dim))
    corners = np.array(np.meshgrid(*[[lo, hi]] * dim)).reshape(dim, -1).T if dim <= 6 else np.empty((0, dim))
    pts = np.vstack([np.zeros((1, dim)), corners, pts])
    best, where = -math.inf, None
    for p in pts:
        lam = lambda_max_symmetric(jacobian(p, t))
        if lam > best:
            best, where = lam, p
    return best, where


def additive_noise_system(f: Callable, dim: int, dist: Distribution, cell: float,
                          jacobian: Optional[Callable] = None, lambda_max: Optional[float] = None,
                          box=(-3.0, 3.0), n_probes: int = 256, seed: int = 0,
                          kernel: Optional[KernelSpec] = None, name: str = "additive_noise"
                          ) -> ContinuousSystem:
    """dx/dt = f(x, t) + xi_t with xi bounded, zero mean, piecewise constant.

    ``f`` must be contracting in the identity metric. Without a supplied
    ``lambda_max`` certificate the bound is probed over ``box`` and the
    system is rejected if any probe has lambda_f >= 0.
    """
    check_zero_mean(dist)
    if jacobian is None:
        def jacobian(x, t):
            return jacobian_fd(lambda y, tt, _xi: f(y, tt), x, t, None)
    if lambda_max is None:
        lambda_max, where = probe_lambda_max(jacobian, dim, box, n_probes, seed)
        if lambda_max >= 0:
            raise ValueError(f"f is not contracting: lambda_f = {lambda_max:.6g} at x = {where}")
    elif lambda_max >= 0:
        raise ValueError("lambda_max certificate must be negative")
    spec = NoiseSpec((dist,) * dim, Partition(cell=cell))
    lam = float(lambda_max)

    def full(x, t, xi):
        return f(x, t) + xi

    def jac(x, t, xi):
        return np.atleast_2d(jacobian(x, t))

    return ContinuousSystem(
        dim=dim, f=full, jacobian=jac, noise_dim=dim, name=name,
        eta_bound=lambda xi: np.full(np.asarray(xi).shape[:-1], lam),
        noise=spec, kernel=kernel,
        meta={"lambda_max": lam, "sigma": spec.mean_norm_bound, "alpha": spec.alpha,
              "drift": f},
    )


def cubic_additive(c1: float = 1.0, c3: float = 0.0, dim: int = 1,
                   dist: Distribution | None = None, cell: float = 0.1) -> ContinuousSystem:
    """dx/dt = -c1 x - c3 x^3 + xi_t, componentwise.

    With c1 > 0 and c3 >= 0 the symmetrized Jacobian is diagonal with
    entries -c1 - 3 c3 x^2 <= -c1, which is the certificate used.
    """
    if not c1 > 0 or c3 < 0:
        raise ValueError("need c1 > 0 and c3 >= 0")
    dist = dist if dist is not None else uniform(-1.0, 1.0)

    def f(x, t):
        return -c1 * x - c3 * (x * x * x)

    def jac(x, t):
        return np.diag(-c1 - 3.0 * c3 * (np.asarray(x) ** 2))

    return additive_noise_system(
        f, dim, dist, cell, jacobian=jac, lambda_max=-c1,
        kernel=KernelSpec("cubic_additive", (float(c1), float(c3))), name="cubic_additive",
    )


@dataclass(frozen=True)
class ScenarioSpec:
    """Registry entry used by the experiment runner."""

    name: str
    kind: str
    params: dict = field(default_factory=dict)
    description: str = ""


SCENARIOS = {
    "linear_random_gain": ScenarioSpec(
        "linear_random_gain", "discrete", {"x0": "1.0"},
        "x_{i+1} = a_i x_i, a_i iid ~ noise.dist"),
    "stochastic_gradient": ScenarioSpec(
        "stochastic_gradient", "discrete",
        {"hessian": "1, 4", "mu": "0.4", "x0": "1, 1", "x0b": "0, 0"},
        "quadratic objective, P <- P - mu (E(P + Pi) - E(P)) Pi, Pi iid ~ noise.dist"),
    "linear_random_rate": ScenarioSpec(
        "linear_random_rate", "continuous", {"x0": "1.0"},
        "dx/dt = gamma_t x, gamma coarse grain ~ noise.dist on cells noise.cell"),
    "cubic_additive": ScenarioSpec(
        "cubic_additive", "continuous", {"c1": "1.0", "c3": "0.0", "dim": "1", "x0": "1.0", "x0b": "x0"},
        "dx/dt = -c1 x - c3 x^3 + xi_t, xi zero mean ~ noise.dist"),
    "vdp_coupled": ScenarioSpec(
        "vdp_coupled", "continuous",
        {"alpha": "1.0", "w": "1.0", "x0": "2, 0, -1, 0.5"},
        "two Van der Pol oscillators, velocity coupling gains eps1 ~ noise.dist, eps2 ~ noise.dist2"),
}
