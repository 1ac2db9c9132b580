import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stocon.noise import (
    BLOCK,
    NoisePath,
    NoiseSpec,
    Partition,
    bounded_zero_mean,
    check_zero_mean,
    clipped_gaussian,
    coarse_grain_process,
    constant,
    iid_sequence,
    two_point,
    uniform,
)


def test_same_seed_and_index_give_identical_paths():
    a = iid_sequence(two_point(0.5, 1.5), seed=7, path_index=3)
    b = iid_sequence(two_point(0.5, 1.5), seed=7, path_index=3)
    assert np.array_equal(a.draws(0, 10_000), b.draws(0, 10_000))
    assert np.array_equal(a(5), a(5))


def test_draws_do_not_depend_on_query_order():
    a = iid_sequence(uniform(0, 1), 1, 0)
    late = a.draws(BLOCK + 5, BLOCK + 10).copy()
    b = iid_sequence(uniform(0, 1), 1, 0)
    full = b.draws(0, 2 * BLOCK)
    assert np.array_equal(late, full[BLOCK + 5:BLOCK + 10])
    assert np.array_equal(b.draw(BLOCK + 7), full[BLOCK + 7])


def test_paths_and_streams_differ():
    d = uniform(0, 1)
    x = iid_sequence(d, 1, 0).draws(0, 100)
    assert not np.array_equal(x, iid_sequence(d, 1, 1).draws(0, 100))
    assert not np.array_equal(x, iid_sequence(d, 1, 0, stream=1).draws(0, 100))
    assert not np.array_equal(x, iid_sequence(d, 2, 0).draws(0, 100))


def test_two_point_values_and_frequency():
    x = iid_sequence(two_point(0.5, 1.5), 0, 0).draws(0, 20_000)[:, 0]
    assert set(np.unique(x)) == {0.5, 1.5}
    assert abs(np.mean(x == 0.5) - 0.5) < 0.02


@pytest.mark.parametrize("dist", [uniform(-1, 1), uniform(0.2, 0.8), two_point(-2, 0.5, 0.3),
                                  clipped_gaussian(0.0, 1.0, 1.5), clipped_gaussian(1.0, 0.5, 0.4)])
def test_closed_form_moments_match_sampling(dist):
    x = iid_sequence(dist, 3, 0).draws(0, 200_000)[:, 0]
    assert abs(x.mean() - dist.mean) < 5 * x.std() / math.sqrt(x.size) + 1e-12
    assert abs((x ** 2).mean() - dist.second_moment) < 5 * (x ** 2).std() / math.sqrt(x.size) + 1e-12
    if dist.mean_abs is not None:
        assert abs(np.abs(x).mean() - dist.mean_abs) < 5 * np.abs(x).std() / math.sqrt(x.size) + 1e-12
    assert np.all(np.abs(x) <= dist.bound + 1e-12)


def test_closed_form_values():
    assert uniform(0.2, 0.8).second_moment == pytest.approx(0.28)
    assert two_point(0.5, 1.5).second_moment == pytest.approx(1.25)
    assert two_point(0.5, 1.5).mean_log_abs == pytest.approx(0.5 * (math.log(0.5) + math.log(1.5)))
    assert uniform(-1, 1).mean_abs == pytest.approx(0.5)
    # E log a for uniform [a, b], checked against midpoint quadrature
    grid = np.linspace(0.2, 0.8, 200_001)
    mid = 0.5 * (grid[1:] + grid[:-1])
    assert uniform(0.2, 0.8).mean_log_abs == pytest.approx(np.mean(np.log(mid)), abs=1e-9)
    assert two_point(-2, 0.5).mgf(2.0) == pytest.approx((math.exp(-4) + math.e) / 2)


def test_uniform_mgf_against_quadrature():
    grid = np.linspace(-1.0, 2.0, 300_001)
    mid = 0.5 * (grid[1:] + grid[:-1])
    assert uniform(-1, 2).mgf(0.7) == pytest.approx(np.mean(np.exp(0.7 * mid)), rel=1e-9)


def test_constant_distribution():
    x = iid_sequence(constant(0.5), 0, 0).draws(0, 50)
    assert np.all(x == 0.5)


def test_partition_uniform_cells():
    p = Partition(cell=0.1)
    assert p.boundary(0) == 0.0 and p.length(4) == pytest.approx(0.1)
    assert p.cell_index(0.0) == 0
    # right-continuous at boundaries, consistent with boundary(n)
    for n in range(1, 200):
        assert p.cell_index(p.boundary(n)) == n
        assert p.cell_index(p.boundary(n) - 1e-9) == n - 1
    assert p.boundaries_within(0.35) == pytest.approx([0.1, 0.2, 0.3])
    assert p.n_cells(0.35) == 4


def test_partition_explicit_boundaries_extend_with_last_length():
    p = Partition(boundaries=(0.5, 2.0))
    assert [p.boundary(n) for n in range(5)] == [0.0, 0.5, 2.0, 3.5, 5.0]
    assert p.cell_index(0.49) == 0 and p.cell_index(0.5) == 1 and p.cell_index(4.0) == 3


@pytest.mark.parametrize("kw", [{}, {"cell": 1.0, "boundaries": (1.0,)}, {"cell": 0.0},
                                {"boundaries": (1.0, 0.5)}, {"boundaries": (0.0, 1.0)}])
def test_partition_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        Partition(**kw)


@given(st.floats(0.0, 100.0))
def test_coarse_grain_path_is_constant_on_cells(t):
    path = coarse_grain_process(Partition(cell=0.7), uniform(0, 1), 5, 2)
    n = path.partition.cell_index(t)
    assert np.array_equal(path(t), path.cell_value(n))
    assert path.integral_over_cell(n) == pytest.approx(0.7 * float(path.cell_value(n)[0]))


def test_noise_checks():
    with pytest.raises(ValueError):
        check_zero_mean(uniform(0.0, 1.0))
    check_zero_mean(uniform(-1.0, 1.0))
    with pytest.raises(ValueError):
        bounded_zero_mean(two_point(0.0, 1.0), 0, 0, dt=0.1)
    path = bounded_zero_mean(uniform(-1, 1), 0, 0, dt=0.1)
    assert path.is_coarse_grain
    with pytest.raises(TypeError):
        iid_sequence(uniform(0, 1), 0, 0).cell_value(0)


@pytest.mark.parametrize("bad", [lambda: uniform(1, 0), lambda: two_point(0, 1, 1.5),
                                 lambda: clipped_gaussian(0, 1, 0), lambda: uniform(0, math.inf)])
def test_distribution_validation(bad):
    with pytest.raises(ValueError):
        bad()


def test_noise_spec_sigma_and_alpha():
    s = NoiseSpec((uniform(-1, 1),), Partition(cell=0.1))
    assert s.mean_norm_bound == pytest.approx(0.5) and s.alpha == 1.0
    s2 = NoiseSpec((uniform(-1, 1), uniform(-1, 1)))
    # Jensen bound sqrt(E|xi|^2) for several components
    assert s2.mean_norm_bound == pytest.approx(math.sqrt(2 / 3))
    assert s2.path(0, 1).dim == 2


def test_multicomponent_draws_are_uncorrelated():
    x = NoisePath((two_point(-1, 1),) * 3, 0, 0).draws(0, 20_000)
    c = np.corrcoef(x, rowvar=False)
    assert np.max(np.abs(c - np.eye(3))) < 0.05
