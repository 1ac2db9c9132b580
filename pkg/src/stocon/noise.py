"""Seeded, reproducible stationary noise.

Every random value is a pure function of ``(seed, stream, path_index, block)``:
values are generated in fixed-size blocks, each from its own
``numpy.random.SeedSequence`` child, so paths can be evaluated in any order,
on any worker, and always agree bit for bit.

Continuous noise is piecewise constant on the cells of a :class:`Partition`
and right-continuous at cell boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

BLOCK = 4096


@dataclass(frozen=True)
class Distribution:
    """Scalar law of one noise component.

    ``kind`` is one of ``"uniform"`` (params ``a, b``), ``"two_point"``
    (``v1, v2, p`` with P(v1) = p) or ``"clipped_gaussian"``
    (``mean, stdev, clip``; samples are clipped to ``mean +/- clip``).
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        if not all(math.isfinite(v) for v in p):
            raise ValueError(f"non-finite distribution parameter in {p}")
        if self.kind == "uniform":
            if len(p) != 2 or p[0] > p[1]:
                raise ValueError("uniform needs a <= b")
        elif self.kind == "two_point":
            if len(p) != 3 or not 0.0 <= p[2] <= 1.0:
                raise ValueError("two_point needs v1, v2 and p in [0, 1]")
        elif self.kind == "clipped_gaussian":
            if len(p) != 3 or p[1] < 0 or not p[2] > 0:
                raise ValueError("clipped_gaussian needs stdev >= 0 and clip > 0")
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "uniform":
            a, b = self.params
            return a + (b - a) * rng.random(size)
        if self.kind == "two_point":
            v1, v2, p = self.params
            return np.where(rng.random(size) < p, v1, v2)
        mu, sd, c = self.params
        return np.clip(mu + sd * rng.standard_normal(size), mu - c, mu + c)

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        if self.kind == "two_point":
            v1, v2, p = self.params
            return p * v1 + (1 - p) * v2
        return self.params[0]

    @property
    def second_moment(self) -> float:
        if self.kind == "uniform":
            a, b = self.params
            return (a * a + a * b + b * b) / 3.0
        if self.kind == "two_point":
            v1, v2, p = self.params
            return p * v1 * v1 + (1 - p) * v2 * v2
        mu, sd, c = self.params
        return mu * mu + sd * sd * _clipped_std_normal_var(c / sd if sd > 0 else math.inf)

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    @property
    def mean_abs(self) -> Optional[float]:
        """E|X|; None where no closed form is available."""
        if self.kind == "uniform":
            a, b = self.params
            if a >= 0:
                return self.mean
            if b <= 0:
                return -self.mean
            return (a * a + b * b) / (2.0 * (b - a))
        if self.kind == "two_point":
            v1, v2, p = self.params
            return p * abs(v1) + (1 - p) * abs(v2)
        mu, sd, c = self.params
        if mu != 0.0:
            return None
        if sd == 0.0:
            return 0.0
        k = c / sd
        return sd * (2.0 * (_phi(0.0) - _phi(k)) + 2.0 * k * (1.0 - _Phi(k)))

    @property
    def mean_log_abs(self) -> Optional[float]:
        """E log|X| (may be -inf); None where no closed form is available."""
        if self.kind == "uniform":
            a, b = self.params
            if a == b:
                return -math.inf if a == 0 else math.log(abs(a))

            def prim(x):
                return 0.0 if x == 0 else x * math.log(abs(x)) - x

            return (prim(b) - prim(a)) / (b - a)
        if self.kind == "two_point":
            v1, v2, p = self.params
            out = 0.0
            for v, w in ((v1, p), (v2, 1 - p)):
                if w == 0:
                    continue
                if v == 0:
                    return -math.inf
                out += w * math.log(abs(v))
            return out
        return None

    def mgf(self, s: float) -> Optional[float]:
        """E exp(s X); None where no closed form is available."""
        if self.kind == "uniform":
            a, b = self.params
            if a == b or s == 0:
                return math.exp(s * a)
            return (math.exp(s * b) - math.exp(s * a)) / (s * (b - a))
        if self.kind == "two_point":
            v1, v2, p = self.params
            return p * math.exp(s * v1) + (1 - p) * math.exp(s * v2)
        return None

    @property
    def bound(self) -> float:
        """Smallest alpha with |X| <= alpha almost surely."""
        if self.kind == "uniform":
            return max(abs(self.params[0]), abs(self.params[1]))
        if self.kind == "two_point":
            v1, v2, p = self.params
            return max(abs(v1) if p > 0 else 0.0, abs(v2) if p < 1 else 0.0)
        mu, _, c = self.params
        return abs(mu) + c

    def describe(self) -> str:
        return f"{self.kind}({', '.join(repr(v) for v in self.params)})"


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _Phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _clipped_std_normal_var(k: float) -> float:
    if math.isinf(k):
        return 1.0
    return (2.0 * _Phi(k) - 1.0) - 2.0 * k * _phi(k) + 2.0 * k * k * (1.0 - _Phi(k))


def uniform(a: float, b: float) -> Distribution:
    return Distribution("uniform", (a, b))


def two_point(v1: float, v2: float, p: float = 0.5) -> Distribution:
    return Distribution("two_point", (v1, v2, p))


def clipped_gaussian(mean: float, stdev: float, clip: float) -> Distribution:
    return Distribution("clipped_gaussian", (mean, stdev, clip))


def constant(c: float) -> Distribution:
    return Distribution("uniform", (c, c))


@dataclass(frozen=True)
class Partition:
    """Cells P_0 = [0, t_1), P_n = [t_n, t_{n+1}) of the half line.

    Give either a uniform ``cell`` length or explicit ``boundaries``. Past the
    last explicit boundary the cells continue with the length of the final
    listed cell.
    """

    cell: Optional[float] = None
    boundaries: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if (self.cell is None) == (self.boundaries is None):
            raise ValueError("give exactly one of cell or boundaries")
        if self.cell is not None:
            if not (math.isfinite(self.cell) and self.cell > 0):
                raise ValueError("cell length must be positive")
            object.__setattr__(self, "cell", float(self.cell))
        else:
            b = tuple(float(v) for v in self.boundaries)
            if not b or b[0] <= 0 or any(y <= x for x, y in zip(b, b[1:])):
                raise ValueError("boundaries must be strictly increasing and start above 0")
            object.__setattr__(self, "boundaries", b)

    def boundary(self, n: int) -> float:
        """t_n, with t_0 = 0."""
        if n < 0:
            raise ValueError("cell index must be >= 0")
        if self.cell is not None:
            return n * self.cell
        b = self.boundaries
        if n == 0:
            return 0.0
        if n <= len(b):
            return b[n - 1]
        last = b[-1] - (b[-2] if len(b) > 1 else 0.0)
        return b[-1] + (n - len(b)) * last

    def length(self, n: int) -> float:
        return self.boundary(n + 1) - self.boundary(n)

    def cell_index(self, t: float) -> int:
        if t < 0:
            raise ValueError("time must be >= 0")
        if self.cell is not None:
            k = int(math.floor(t / self.cell))
            # keep lookups consistent with boundary(n) = n * cell
            while self.boundary(k + 1) <= t:
                k += 1
            while k > 0 and self.boundary(k) > t:
                k -= 1
            return k
        b = self.boundaries
        if t < b[-1]:
            return int(np.searchsorted(b, t, side="right"))
        last = b[-1] - (b[-2] if len(b) > 1 else 0.0)
        k = len(b) + int(math.floor((t - b[-1]) / last))
        while self.boundary(k + 1) <= t:
            k += 1
        while self.boundary(k) > t:
            k -= 1
        return k

    def cell_indices(self, ts) -> np.ndarray:
        return np.array([self.cell_index(float(t)) for t in np.asarray(ts).reshape(-1)], dtype=np.int64)

    def boundaries_within(self, T: float) -> list[float]:
        """Boundaries t_n with 0 < t_n < T."""
        out = []
        n = 1
        while True:
            tn = self.boundary(n)
            if tn >= T:
                return out
            out.append(tn)
            n += 1

    def n_cells(self, T: float) -> int:
        """Number of cells that intersect [0, T)."""
        return len(self.boundaries_within(T)) + 1


@dataclass(frozen=True)
class NoisePath:
    """One sample path, a deterministic function of (seed, stream, path_index).

    ``dists`` holds one scalar law per noise component; components are
    drawn independently. Discrete paths are indexed by step, coarse-grain
    paths by time through ``partition``.
    """

    dists: tuple[Distribution, ...]
    seed: int
    path_index: int
    stream: int = 0
    partition: Optional[Partition] = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.seed < 0 or self.path_index < 0 or self.stream < 0:
            raise ValueError("seed, stream and path index must be nonnegative")
        if not self.dists:
            raise ValueError("need at least one noise component")
        object.__setattr__(self, "dists", tuple(self.dists))

    @property
    def dim(self) -> int:
        return len(self.dists)

    @property
    def is_coarse_grain(self) -> bool:
        return self.partition is not None

    def _block(self, b: int) -> np.ndarray:
        blk = self._cache.get(b)
        if blk is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, self.path_index, b))
            rng = np.random.Generator(np.random.PCG64(ss))
            blk = np.column_stack([d.sample(rng, BLOCK) for d in self.dists])
            blk.flags.writeable = False
            self._cache[b] = blk
        return blk

    def draws(self, start: int, stop: int) -> np.ndarray:
        """Values of draws ``start .. stop-1`` as an array of shape (k, m)."""
        if start < 0 or stop < start:
            raise ValueError("bad draw range")
        if stop == start:
            return np.empty((0, self.dim))
        parts = []
        b0, b1 = start // BLOCK, (stop - 1) // BLOCK
        for b in range(b0, b1 + 1):
            lo = max(start, b * BLOCK) - b * BLOCK
            hi = min(stop, (b + 1) * BLOCK) - b * BLOCK
            parts.append(self._block(b)[lo:hi])
        return np.concatenate(parts, axis=0)

    def draw(self, k: int) -> np.ndarray:
        return self._block(k // BLOCK)[k % BLOCK]

    def __call__(self, t) -> np.ndarray:
        """Noise value at step ``t`` (discrete) or time ``t`` (coarse grain)."""
        if self.partition is None:
            if int(t) != t or t < 0:
                raise ValueError("discrete paths are indexed by nonnegative integers")
            return self.draw(int(t))
        return self.draw(self.partition.cell_index(float(t)))

    def cell_value(self, n: int) -> np.ndarray:
        self._require_coarse()
        return self.draw(n)

    def integral_over_cell(self, n: int):
        """Exact integral |P_n| * G_n over cell n."""
        self._require_coarse()
        v = self.length(n) * self.draw(n)
        return float(v[0]) if self.dim == 1 else v

    def length(self, n: int) -> float:
        return self.partition.length(n)

    def _require_coarse(self):
        if self.partition is None:
            raise TypeError("operation needs a coarse-grain path")


def iid_sequence(dist: Distribution | Sequence[Distribution], seed: int, path_index: int,
                 stream: int = 0) -> NoisePath:
    dists = (dist,) if isinstance(dist, Distribution) else tuple(dist)
    return NoisePath(dists, seed, path_index, stream)


def coarse_grain_process(part: Partition, dist: Distribution | Sequence[Distribution], seed: int,
                         path_index: int, stream: int = 0) -> NoisePath:
    dists = (dist,) if isinstance(dist, Distribution) else tuple(dist)
    return NoisePath(dists, seed, path_index, stream, partition=part)


def integral_over_cell(path: NoisePath, n: int):
    return path.integral_over_cell(n)


def check_zero_mean(dist: Distribution, tol: float = 1e-12):
    if abs(dist.mean) > tol:
        raise ValueError(f"noise must have zero mean, {dist.describe()} has mean {dist.mean}")


def bounded_zero_mean(dist: Distribution | Sequence[Distribution], seed: int, path_index: int,
                      dt: float, stream: int = 0) -> NoisePath:
    dists = (dist,) if isinstance(dist, Distribution) else tuple(dist)
    for d in dists:
        check_zero_mean(d)
        if not math.isfinite(d.bound):
            raise ValueError("noise bound must be finite")
    return NoisePath(dists, seed, path_index, stream, partition=Partition(cell=dt))


@dataclass(frozen=True)
class NoiseSpec:
    """Recipe for the noise paths of a system: one law per component plus,
    for continuous systems, the partition the paths are constant on."""

    dists: tuple[Distribution, ...]
    partition: Optional[Partition] = None

    def __post_init__(self):
        object.__setattr__(self, "dists", tuple(self.dists))

    @property
    def dim(self) -> int:
        return len(self.dists)

    def path(self, seed: int, path_index: int, stream: int = 0) -> NoisePath:
        return NoisePath(self.dists, seed, path_index, stream, partition=self.partition)

    @property
    def alpha(self) -> float:
        """Almost-sure bound on the Euclidean norm of a noise value."""
        return math.sqrt(sum(d.bound ** 2 for d in self.dists))

    @property
    def mean_norm_bound(self) -> float:
        """Bound sigma on E||xi||: exact for one component, Jensen otherwise."""
        if self.dim == 1 and self.dists[0].mean_abs is not None:
            return self.dists[0].mean_abs
        return math.sqrt(sum(d.second_moment for d in self.dists))
