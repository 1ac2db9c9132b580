"""State, system and metric types shared by the rest of the package.

States are plain read-only ``float64`` arrays; systems and metrics are frozen
dataclasses wrapping pure callables. Everything here is immutable once built,
so instances can be handed to worker threads without copying.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

StateVector = np.ndarray

DiscreteMap = Callable[[np.ndarray, int, np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray, float, np.ndarray], np.ndarray]
JacobianFn = Callable[[np.ndarray, Any, np.ndarray], np.ndarray]


class NonFiniteError(ValueError):
    """A state, matrix or map output contained NaN or Inf."""


def state_vector(entries: Sequence[float] | np.ndarray, dim: Optional[int] = None) -> StateVector:
    """Validate ``entries`` and return them as a read-only 1-d float array."""
    x = np.array(entries, dtype=float).reshape(-1)
    if x.size < 1:
        raise ValueError("state dimension must be >= 1")
    if dim is not None and x.size != dim:
        raise ValueError(f"expected state of dimension {dim}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"state has non-finite entries: {x}")
    x.flags.writeable = False
    return x


@dataclass(frozen=True)
class KernelSpec:
    """Names a compiled vector field so ensembles can bypass Python callbacks."""

    model: str
    params: tuple[float, ...] = ()


@dataclass(frozen=True)
class DiscreteSystem:
    """x_{i+1} = f(x_i, i, xi_i).

    ``eta_bound`` maps a noise value to a bound on the largest singular value
    of the generalized Jacobian that holds for every state; analyses that
    need the bounding process read it from here.
    """

    dim: int
    f: DiscreteMap
    jacobian: Optional[JacobianFn] = None
    noise_dim: int = 1
    name: str = "discrete"
    eta_bound: Optional[Callable[[np.ndarray], float]] = None
    noise: Any = None
    kernel: Optional[KernelSpec] = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")

    continuous = False


@dataclass(frozen=True)
class ContinuousSystem:
    """dx/dt = f(x, t, xi_t) with xi_t a cadlag noise path."""

    dim: int
    f: VectorField
    jacobian: Optional[JacobianFn] = None
    noise_dim: int = 1
    name: str = "continuous"
    eta_bound: Optional[Callable[[np.ndarray], float]] = None
    noise: Any = None
    kernel: Optional[KernelSpec] = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")

    continuous = True


@dataclass(frozen=True)
class Metric:
    """Time-dependent coordinate transform Theta(t) with M = Theta^T Theta.

    Only state-independent transforms are supported.
    """

    dim: int
    theta: Callable[[float], np.ndarray]
    lower_bound: float
    theta_dot: Optional[Callable[[float], np.ndarray]] = None
    is_identity: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if not self.lower_bound > 0:
            raise ValueError("metric lower bound must be positive")


def make_metric_identity(n: int) -> Metric:
    if n < 1:
        raise ValueError("dimension must be >= 1")
    eye = np.eye(n)
    eye.flags.writeable = False
    zero = np.zeros((n, n))
    zero.flags.writeable = False
    return Metric(
        dim=n,
        theta=lambda t: eye,
        lower_bound=1.0,
        theta_dot=lambda t: zero,
        is_identity=True,
    )


def check_metric(metric: Metric, times: Sequence[float], tol: float = 1e-9) -> dict:
    """Sample Theta(t) and confirm the uniform positive-definiteness bound.

    Returns a dict with the smallest eigenvalue of Theta^T Theta seen, the
    worst condition number, and ``ok``.
    """
    min_eig = np.inf
    worst_cond = 1.0
    for t in times:
        th = np.asarray(metric.theta(float(t)), dtype=float)
        if th.shape != (metric.dim, metric.dim) or not np.all(np.isfinite(th)):
            return {"min_eig": np.nan, "max_cond": np.inf, "ok": False, "at": float(t)}
        min_eig = min(min_eig, float(np.linalg.eigvalsh(th.T @ th)[0]))
        worst_cond = max(worst_cond, float(np.linalg.cond(th)))
    ok = min_eig >= metric.lower_bound - tol and np.isfinite(worst_cond)
    return {"min_eig": min_eig, "max_cond": worst_cond, "ok": bool(ok)}


@dataclass(frozen=True)
class VariationalState:
    x: StateVector
    dz: np.ndarray

    def __post_init__(self):
        x = state_vector(self.x)
        dz = np.array(self.dz, dtype=float).reshape(-1)
        if dz.size != x.size:
            raise ValueError("x and dz must have equal dimension")
        if not np.all(np.isfinite(dz)):
            raise NonFiniteError("dz has non-finite entries")
        dz.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "dz", dz)

    @property
    def log_norm(self) -> float:
        nrm = float(np.linalg.norm(self.dz))
        return -np.inf if nrm == 0.0 else float(np.log(nrm))


@dataclass
class ValidationReport:
    fd_only: bool
    max_discrepancy: Optional[float]
    non_finite: list = field(default_factory=list)
    fd_jacobians: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        if self.non_finite:
            return False
        return self.fd_only or (self.max_discrepancy is not None and self.max_discrepancy <= 1e-5)


def validate_system(sys, probes: Sequence[tuple]) -> ValidationReport:
    """Compare analytic and finite-difference Jacobians over ``probes``.

    Each probe is ``(state, time_or_step, noise)``. Non-finite outputs are
    recorded in the report rather than raised.
    """
    from .spectral import jacobian_fd

    if not probes:
        raise ValueError("probes must be nonempty")
    report = ValidationReport(fd_only=sys.jacobian is None, max_discrepancy=None)
    worst = 0.0
    for x, t, xi in probes:
        x = np.asarray(x, dtype=float).reshape(-1)
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi)) and np.isfinite(t)):
            raise ValueError("probes must be finite")
        with np.errstate(all="ignore"):
            fx = np.asarray(sys.f(x, t, xi), dtype=float)
        if fx.shape != (sys.dim,) or not np.all(np.isfinite(fx)):
            report.non_finite.append((x.copy(), t, xi.copy()))
            continue
        try:
            j_fd = jacobian_fd(sys.f, x, t, xi)
        except NonFiniteError:
            report.non_finite.append((x.copy(), t, xi.copy()))
            continue
        report.fd_jacobians.append(j_fd)
        if sys.jacobian is not None:
            j_an = np.asarray(sys.jacobian(x, t, xi), dtype=float).reshape(sys.dim, sys.dim)
            scale = max(float(np.linalg.norm(j_an)), 1.0)
            worst = max(worst, float(np.linalg.norm(j_an - j_fd)) / scale)
    if sys.jacobian is not None:
        report.max_discrepancy = worst
    return report
