"""Estimators and condition checks for contraction of random systems.

Means carry normal-approximation 95% intervals; fitted rates carry
bootstrap intervals. A verdict is true only when the upper end of the
interval sits strictly below the hard cap (0 for log-rates, 1 for second
moments) and, when a rate cap eta is given, at or below eta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .ensemble import EnsembleResult, run_ensemble
from .noise import check_zero_mean
from .propagate import envelope_sequence

Z95 = 1.959963984540054
MIN_SAMPLES = 30


class Row(NamedTuple):
    quantity: str
    estimate: float
    ci_lo: float
    ci_hi: float
    threshold: float
    verdict: bool


@dataclass
class RateEstimate:
    slope: float
    intercept: float
    residual: float
    window: tuple
    n_samples: int
    running_max: Optional[float] = None
    rate: Optional[float] = None
    ci: Optional[tuple] = None

    def rows(self, quantity="slope", threshold=0.0):
        if self.rate is not None:
            lo, hi = self.ci if self.ci is not None else (self.rate, self.rate)
            return [Row(quantity, self.rate, lo, hi, threshold, hi < threshold)]
        return [Row(quantity, self.slope, self.slope, self.slope, threshold, self.slope < threshold)]


@dataclass
class ContractionVerdict:
    condition: str
    quantity: str
    estimate: float
    ci_lo: float
    ci_hi: float
    threshold: float
    verdict: bool
    n_samples: int
    eta: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def rows(self):
        return [Row(self.quantity, self.estimate, self.ci_lo, self.ci_hi, self.threshold, self.verdict)]


def _mean_ci(x, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    with np.errstate(invalid="ignore"):
        m = x.mean(axis=axis)
        se = x.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(m)
    neg = np.isneginf(m)
    se = np.where(neg, 0.0, se)
    return m, se, m - Z95 * se, m + Z95 * se


def _decide(ci_hi, hard_cap, eta):
    ok = ci_hi < hard_cap
    if eta is not None:
        ok = ok and ci_hi <= eta
    return bool(ok)


def _lyap_fit(t, y):
    tm, ym = t.mean(), y.mean()
    dt = t - tm
    slope = float(np.dot(dt, y - ym) / np.dot(dt, dt))
    icpt = float(ym - slope * tm)
    res = float(np.sqrt(np.mean((y - icpt - slope * t) ** 2)))
    return slope, icpt, res


def finite_time_lyapunov(traj, q: float = 0.5, times=None) -> RateEstimate:
    """Least-squares slope of log||dz|| against time over the last q of the horizon.

    Accepts a Trajectory, or an array of log-norms together with ``times``.
    A zero displacement in the window makes the slope -inf.
    """
    if not 0 < q <= 1:
        raise ValueError("tail fraction must be in (0, 1]")
    if times is None:
        if traj.log_dz is None:
            raise ValueError("trajectory carries no dz norms")
        t, y = np.asarray(traj.times, float), np.asarray(traj.log_dz, float)
    else:
        t, y = np.asarray(times, float), np.asarray(traj, float)
    start = t[-1] - q * (t[-1] - t[0])
    sel = t >= start - 1e-12 * max(1.0, abs(t[-1]))
    if sel.sum() < MIN_SAMPLES:
        raise ValueError(f"tail window holds {int(sel.sum())} samples, need {MIN_SAMPLES}")
    tw, yw = t[sel], y[sel]
    window = (float(tw[0]), float(tw[-1]))
    if np.any(np.isneginf(yw)):
        return RateEstimate(-math.inf, -math.inf, 0.0, window, int(sel.sum()), -math.inf)
    slope, icpt, res = _lyap_fit(tw, yw)
    with np.errstate(divide="ignore", invalid="ignore"):
        running = (yw - y[0]) / (tw - t[0])
    running = running[np.isfinite(running)]
    rmax = float(running.max()) if running.size else slope
    return RateEstimate(slope, icpt, res, window, int(sel.sum()), rmax)


def _check_moment(samples, eta, hard_cap, condition, quantity, stationary):
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample set")
    if np.any(np.isnan(x)) or np.any(np.isposinf(x)):
        raise ValueError("samples must be finite or -inf")
    if x.ndim == 1:
        x = x[:, None]
        stationary = True
    if stationary or x.shape[0] < MIN_SAMPLES:
        pooled = x.reshape(-1, 1)
        if pooled.shape[0] < MIN_SAMPLES:
            raise ValueError(f"need at least {MIN_SAMPLES} samples")
        m, se, lo, hi = _mean_ci(pooled)
        j = 0
        mode = "pooled"
    else:
        m, se, lo, hi = _mean_ci(x)
        j = int(np.argmax(hi))
        mode = "per-step max"
    with np.errstate(invalid="ignore"):
        flat = x.reshape(-1)
        running = np.cumsum(flat) / np.arange(1, flat.size + 1)
    pm, pse, plo, phi = _mean_ci(x.reshape(-1, 1))
    threshold = eta if eta is not None else hard_cap
    return ContractionVerdict(
        condition, quantity, float(m[j]), float(lo[j]), float(hi[j]), float(threshold),
        _decide(float(hi[j]), hard_cap, eta), int(x.size), eta,
        {"mode": mode, "argmax_step": j, "pooled_mean": float(pm[0]),
         "pooled_ci": (float(plo[0]), float(phi[0])),
         "lln_running_mean": running,
         "lln_drift": float(abs(running[-1] - running[running.size // 2])) if np.isfinite(running[-1]) else 0.0},
    )


def check_T1_discrete(log_eta, eta: Optional[float] = None, stationary: bool = False) -> ContractionVerdict:
    """E log eta_i uniformly below some eta < 0.

    ``log_eta`` is (paths, steps) or a single sequence. Per-step means are
    taken across paths and the worst step decides; with ``stationary`` (or
    fewer than 30 paths) all samples are pooled.
    """
    if eta is not None and not eta < 0:
        raise ValueError("rate cap must be negative")
    return _check_moment(log_eta, eta, 0.0, "T1", "E[log eta]", stationary)


def check_T2_discrete(eta_sq, eta: Optional[float] = None, stationary: bool = False) -> ContractionVerdict:
    """E eta_i^2 uniformly below some 0 <= eta < 1."""
    if eta is not None and not 0 <= eta < 1:
        raise ValueError("rate cap must be in [0, 1)")
    return _check_moment(eta_sq, eta, 1.0, "T2", "E[eta^2]", stationary)


def _log_mean_exp(a, axis=0):
    mx = np.max(a, axis=axis)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.mean(np.exp(a - np.expand_dims(safe, axis)), axis=axis))
    return np.where(np.isneginf(mx), -np.inf, out)


def _ess(a, axis=0):
    mx = np.max(a, axis=axis)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    w = np.exp(a - np.expand_dims(safe, axis))
    s1, s2 = w.sum(axis=axis), (w * w).sum(axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s2 > 0, s1 * s1 / s2, 0.0)


def _ms_log_rate(log_sq, times):
    lm = _log_mean_exp(log_sq, axis=0)
    if np.any(np.isneginf(lm)):
        return -math.inf
    ess = _ess(log_sq, axis=0)
    w = np.minimum(ess[:-1], ess[1:])
    inc = np.diff(lm) / np.diff(times)
    return float(np.sum(w * inc) / np.sum(w))


def ms_rate_fit(log_dz, times, n_boot: int = 200, seed: int = 0) -> RateEstimate:
    """Geometric rate of E||dz_i||^2 from an ensemble of log-norms (paths, samples).

    The Monte Carlo mean of ||dz||^2 is taken in log space at every sample;
    the per-unit-time growth of its log is averaged with weights equal to the
    effective sample size (sum w)^2 / sum w^2 of the mean, which discounts
    late times where a handful of paths dominate. ``rate`` is exp(slope)
    with a path-bootstrap interval.
    """
    ld = np.asarray(log_dz, dtype=float)
    times = np.asarray(times, dtype=float)
    P = ld.shape[0]
    if P < 100:
        raise ValueError("need at least 100 paths")
    if np.any(np.isposinf(ld)) or np.any(np.isnan(ld)):
        raise ValueError("log norms must be finite or -inf")
    log_sq = 2.0 * ld
    window = (float(times[0]), float(times[-1]))
    slope = _ms_log_rate(log_sq, times)
    if slope == -math.inf:
        return RateEstimate(-math.inf, -math.inf, 0.0, window, P, rate=0.0, ci=(0.0, 0.0))
    lm = _log_mean_exp(log_sq, axis=0)
    icpt = float(lm[0])
    res = float(np.sqrt(np.mean((lm - icpt - slope * (times - times[0])) ** 2)))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(97,))))
    boots = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, P, P)
        boots[b] = math.exp(_ms_log_rate(log_sq[idx], times))
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return RateEstimate(slope, icpt, res, window, P, rate=math.exp(slope), ci=(float(lo), float(hi)))


def check_T3_continuous(cell_integrals, lengths, eta: Optional[float] = None) -> ContractionVerdict:
    """Time average of eta_t below some eta < 0.

    ``cell_integrals`` is (paths, cells). The time average is formed per path
    and the ensemble interval decides; with fewer than 30 paths the
    per-cell rates are pooled instead.
    """
    if eta is not None and not eta < 0:
        raise ValueError("rate cap must be negative")
    ints = np.atleast_2d(np.asarray(cell_integrals, dtype=float))
    L = np.asarray(lengths, dtype=float).reshape(-1)
    if ints.shape[1] < MIN_SAMPLES:
        raise ValueError(f"horizon covers {ints.shape[1]} cells, need {MIN_SAMPLES}")
    if not np.all(np.isfinite(ints)):
        raise ValueError("cell integrals must be finite")
    avg = ints.sum(axis=1) / L.sum()
    if ints.shape[0] >= MIN_SAMPLES:
        m, se, lo, hi = _mean_ci(avg)
        mode = "per-path time average"
    else:
        m, se, lo, hi = _mean_ci((ints / L).reshape(-1))
        mode = "pooled cells"
    cell_means = (ints / L).mean(axis=0)
    threshold = eta if eta is not None else 0.0
    return ContractionVerdict(
        "T3", "time-average eta", float(m), float(lo), float(hi), float(threshold),
        _decide(float(hi), 0.0, eta), int(ints.size), eta,
        {"mode": mode, "path_averages": avg, "max_cell_mean": float(cell_means.max())},
    )


def envelope_check(log_dz_cells, cell_integrals, rel: float = 1e-6):
    """Count cells where ||dz_{t_n}|| > Z_n (1 + rel) across paths.

    ``log_dz_cells`` is (paths, cells + 1) sampled at t_0 .. t_C.
    Returns ``(violations, worst_log_excess)``.
    """
    ld = np.atleast_2d(np.asarray(log_dz_cells, dtype=float))
    ints = np.atleast_2d(np.asarray(cell_integrals, dtype=float))
    slack = math.log1p(rel)
    viol, worst = 0, -math.inf
    for p in range(ld.shape[0]):
        if np.isneginf(ld[p, 0]):
            # zero start: dz stays zero and so does Z
            excess = np.where(np.isneginf(ld[p]), -np.inf, np.inf)
        else:
            # Z_n / Z_0 from the recursion, kept in log form so it cannot underflow
            logz = ld[p, 0] + envelope_sequence(ints[p], 1.0).log_Z
            excess = np.where(np.isneginf(ld[p]), -np.inf, ld[p] - logz)
        viol += int(np.sum(excess > slack))
        worst = max(worst, float(np.max(excess)))
    return viol, worst


def check_T4_coarse_grain(cell_integrals, eta: Optional[float] = None,
                          log_dz_cells=None, rel: float = 1e-6) -> ContractionVerdict:
    """E (exp int_{P_n} eta)^2 uniformly below some 0 <= eta < 1.

    Per-cell means across paths, worst cell decides (pooled below 30 paths).
    With ``log_dz_cells`` the envelope dominance ||dz_{t_n}|| <= Z_n is also
    checked on every path and reported in the diagnostics.
    """
    if eta is not None and not 0 <= eta < 1:
        raise ValueError("rate cap must be in [0, 1)")
    ints = np.atleast_2d(np.asarray(cell_integrals, dtype=float))
    if ints.shape[1] < MIN_SAMPLES and ints.shape[0] < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} cells or paths")
    if not np.all(np.isfinite(ints)):
        raise ValueError("cell integrals must be finite")
    y = np.exp(2.0 * ints)
    if ints.shape[0] >= MIN_SAMPLES:
        m, se, lo, hi = _mean_ci(y)
        j = int(np.argmax(hi))
        mode = "per-cell max"
    else:
        m, se, lo, hi = _mean_ci(y.reshape(-1, 1))
        j = 0
        mode = "pooled"
    pm, pse, plo, phi = _mean_ci(y.reshape(-1, 1))
    diag = {"mode": mode, "argmax_cell": j, "pooled_mean": float(pm[0]),
            "pooled_ci": (float(plo[0]), float(phi[0]))}
    if log_dz_cells is not None:
        v, w = envelope_check(log_dz_cells, ints, rel)
        diag["envelope_violations"] = v
        diag["envelope_worst_log_excess"] = w
    threshold = eta if eta is not None else 1.0
    return ContractionVerdict(
        "T4", "E[exp(2 int eta)]", float(m[j]), float(lo[j]), float(hi[j]), float(threshold),
        _decide(float(hi[j]), 1.0, eta), int(ints.size), eta, diag,
    )


@dataclass
class MeanTrajectoryReport:
    times: np.ndarray
    mean: np.ndarray
    reference: np.ndarray
    discrepancy: np.ndarray
    se: np.ndarray
    max_discrepancy: float
    max_ratio: float
    passed: bool
    paths: int

    def rows(self):
        # t = 0 is exact by construction, so the worst case is taken over t > 0
        ex = np.where(self.times > self.times[0], self.discrepancy - 3.0 * self.se, -np.inf)
        k = int(np.argmax(ex))
        return [Row("max over t>0 of |mean - deterministic| - 3 SE", float(self.discrepancy[k] - 3.0 * self.se[k]),
                    float(self.discrepancy[k]), float(3.0 * self.se[k]), 0.0, self.passed)]


def _check_additive(system):
    if system.noise is None:
        return
    for d in system.noise.dists:
        check_zero_mean(d)


def mean_trajectory_test(system, x0, T: float, paths: int, seed: int = 0, h=None,
                         stride=None, threads=None, backend=None,
                         ensemble: Optional[EnsembleResult] = None) -> MeanTrajectoryReport:
    """Compare the Monte Carlo mean of x_t with the noise-free trajectory.

    Passes when ||mean - deterministic|| <= 3 SE at every sampled time, SE
    being the norm of the componentwise standard errors.
    """
    _check_additive(system)
    ens = ensemble or run_ensemble(system, x0, T, paths, seed, h=h, stride=stride,
                                   threads=threads, backend=backend)
    ref = run_ensemble(system, x0, T, 1, seed, h=h, stride=stride, threads=1, backend=backend,
                       zero_noise=True)
    if ref.times.shape != ens.times.shape:
        raise ValueError("reference grid differs from the ensemble grid")
    P = ens.paths
    mean = ens.states.mean(axis=0)
    se = np.linalg.norm(ens.states.std(axis=0, ddof=1), axis=1) / math.sqrt(P) if P > 1 \
        else np.zeros(len(ens.times))
    disc = np.linalg.norm(mean - ref.states[0], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(se > 0, disc / se, np.where(disc > 0, np.inf, 0.0))
    return MeanTrajectoryReport(ens.times, mean, ref.states[0], disc, se, float(disc.max()),
                                float(ratio.max()), bool(np.all(disc <= 3.0 * se)), P)


def deviation_bound(t, d0: float, sigma: float, lam: float):
    """E||x1 - x2|| <= d0 e^{lam t} + (2 sigma / |lam|)(1 - e^{lam t})."""
    e = np.exp(lam * np.asarray(t, dtype=float))
    return d0 * e + (2.0 * sigma / abs(lam)) * (1.0 - e)


@dataclass
class DeviationReport:
    times: np.ndarray
    mean_sep: np.ndarray
    se: np.ndarray
    bound: np.ndarray
    asymptote: float
    sigma: float
    lam: float
    max_excess: float
    passed: bool
    paths: int

    def rows(self):
        ex = np.where(self.times > self.times[0], self.mean_sep - self.bound - 3.0 * self.se, -np.inf)
        k = int(np.argmax(ex))
        return [Row("max over t>0 of E|x1-x2| - bound - 3 SE", float(self.mean_sep[k] - self.bound[k] - 3.0 * self.se[k]),
                    float(self.mean_sep[k]), float(self.bound[k]), 0.0, self.passed),
                Row("tail E|x1-x2| vs 2 sigma/|lambda|", float(self.mean_sep[-1]),
                    float(self.mean_sep[-1] - Z95 * self.se[-1]), float(self.mean_sep[-1] + Z95 * self.se[-1]),
                    self.asymptote, bool(self.mean_sep[-1] <= self.asymptote + 3.0 * self.se[-1]))]


def deviation_bound_test(system, x0a, x0b, T: float, paths: int, seed: int = 0,
                         sigma: Optional[float] = None, lam: Optional[float] = None, h=None,
                         stride=None, threads=None, backend=None,
                         ensemble: Optional[EnsembleResult] = None) -> DeviationReport:
    """Check E||x1 - x2|| against the additive-noise deviation bound.

    The two trajectories of each pair are driven by independent noise paths.
    ``sigma`` bounds E||xi|| and ``lam`` is the (negative) contraction rate of
    the drift; both default to the values tagged on the system.
    """
    sigma = system.meta.get("sigma") if sigma is None else sigma
    lam = system.meta.get("lambda_max") if lam is None else lam
    if sigma is None or lam is None:
        raise ValueError("sigma and lambda_max are required")
    if not lam < 0:
        raise ValueError("drift is not contracting (lambda_max >= 0)")
    _check_additive(system)
    ens = ensemble or run_ensemble(system, x0a, T, paths, seed, x0b=x0b, independent_b=True, h=h,
                                   stride=stride, threads=threads, backend=backend)
    sep = ens.separation
    P = sep.shape[0]
    mean = sep.mean(axis=0)
    se = sep.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.zeros_like(mean)
    d0 = float(np.linalg.norm(np.asarray(x0a, float) - np.asarray(x0b, float)))
    b = deviation_bound(ens.times, d0, sigma, lam)
    excess = mean - b - 3.0 * se
    return DeviationReport(ens.times, mean, se, b, 2.0 * sigma / abs(lam), float(sigma), float(lam),
                           float(excess.max()), bool(np.all(excess <= 0)), P)


@dataclass
class SyncReport:
    tail_separation: np.ndarray
    threshold: float
    fraction_synced: float
    predicted: Optional[bool] = None
    min_fraction: float = 0.95

    @property
    def synchronized(self) -> bool:
        return self.fraction_synced >= self.min_fraction

    def rows(self):
        return [Row("fraction of paths synchronized", self.fraction_synced, self.fraction_synced,
                    self.fraction_synced, self.min_fraction, self.synchronized)]


def oscillator_separation(states):
    """||(x1, x1') - (x2, x2')|| for states (..., 4)."""
    s = np.asarray(states, dtype=float)
    return np.sqrt(np.sum((s[..., :2] - s[..., 2:4]) ** 2, axis=-1))


def synchronization(times, states, tail: float = 0.2, threshold: float = 1e-3,
                    predicted: Optional[bool] = None, min_fraction: float = 0.95) -> SyncReport:
    """Tail-averaged separation of two coupled oscillators, per path.

    ``states`` is (paths, samples, 4) or (samples, 4); the average runs over
    the last ``tail`` fraction of the horizon.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(states, dtype=float)
    if s.ndim == 2:
        s = s[None]
    sep = oscillator_separation(s)
    sel = t >= t[-1] - tail * (t[-1] - t[0]) - 1e-12
    avg = sep[:, sel].mean(axis=1)
    return SyncReport(avg, threshold, float(np.mean(avg < threshold)), predicted, min_fraction)


def mean_decay_fit(times, diffs) -> RateEstimate:
    """Geometric decay factor of the Monte Carlo mean of paired differences.

    ``diffs`` is (paths, samples, n). Fits log||mean|| by weighted least
    squares (weights (||mean|| / SE)^2) over the leading samples where the
    mean stays above 3 standard errors.
    """
    d = np.asarray(diffs, dtype=float)
    t = np.asarray(times, dtype=float)
    P = d.shape[0]
    m = d.mean(axis=0)
    se = np.linalg.norm(d.std(axis=0, ddof=1), axis=1) / math.sqrt(P)
    nm = np.linalg.norm(m, axis=1)
    ok = nm > 3.0 * se
    ok[0] = True
    k = int(np.argmin(ok)) if not np.all(ok) else ok.size
    if k < 3:
        raise ValueError("mean perturbation is below noise level too early to fit")
    tt, y = t[:k], np.log(nm[:k])
    # exact samples (zero SE, e.g. the start) get a large finite weight
    w = np.full(k, 1e12)
    pos = se[:k] > 0
    w[pos] = np.minimum((nm[:k][pos] / se[:k][pos]) ** 2, 1e12)
    tm = np.sum(w * tt) / w.sum()
    ym = np.sum(w * y) / w.sum()
    slope = float(np.sum(w * (tt - tm) * (y - ym)) / np.sum(w * (tt - tm) ** 2))
    icpt = float(ym - slope * tm)
    res = float(np.sqrt(np.sum(w * (y - icpt - slope * tt) ** 2) / w.sum()))
    sd = math.sqrt(1.0 / np.sum(w * (tt - tm) ** 2))
    ci = (math.exp(slope - Z95 * sd), math.exp(slope + Z95 * sd))
    return RateEstimate(slope, icpt, res, (float(tt[0]), float(tt[-1])), k, rate=math.exp(slope), ci=ci)
