import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stocon.core import ContinuousSystem, DiscreteSystem, Metric
from stocon.noise import Partition, coarse_grain_process, iid_sequence, two_point, uniform
from stocon.propagate import (
    PropagationError,
    Trajectory,
    envelope_sequence,
    integrate_continuous,
    propagate_pair,
    propagate_variational_discrete,
    step_discrete,
    step_grid,
)
from stocon.scenarios import quadratic_objective, stochastic_gradient, vdp_coupled


def linear_map(a):
    return DiscreteSystem(1, f=lambda x, i, xi: a * x, jacobian=lambda x, i, xi: np.array([[a]]))


def test_step_discrete_scalar():
    assert step_discrete(linear_map(0.5), np.array([4.0]), 0, None)[0] == 2.0


def test_step_discrete_is_reproducible():
    sys = DiscreteSystem(1, f=lambda x, i, xi: xi[0] * x)
    path = iid_sequence(two_point(0.5, 1.5), 11, 4)
    a = step_discrete(sys, np.array([3.0]), 17, path)
    b = step_discrete(sys, np.array([3.0]), 17, iid_sequence(two_point(0.5, 1.5), 11, 4))
    assert np.array_equal(a, b) and a[0] in (1.5, 4.5)


def test_gradient_step_by_hand():
    sys, _ = stochastic_gradient(quadratic_objective([1.0, 4.0]), 0.4, two_point(-1, 1), 2)
    path = iid_sequence((two_point(-1, 1),) * 2, 0, 0)
    P = np.array([1.0, 1.0])
    pi = path(0)
    E = lambda v: 0.5 * (v[0] ** 2 + 4.0 * v[1] ** 2)
    expected = P - 0.4 * (E(P + pi) - E(P)) * pi
    assert np.allclose(step_discrete(sys, P, 0, path), expected, atol=1e-15)
    # one concrete case: Pi = (1, -1) gives (1.2, 0.8)
    assert np.allclose(sys.f(P, 0, np.array([1.0, -1.0])), [1.2, 0.8])


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
def test_step_discrete_non_finite_reports_provenance():
    sys = DiscreteSystem(1, f=lambda x, i, xi: x * 1e300)
    path = iid_sequence(uniform(0, 1), 5, 9)
    with pytest.raises(PropagationError) as e:
        step_discrete(sys, np.array([1e300]), 3, path)
    assert e.value.step == 3 and e.value.seed == 5 and e.value.path_index == 9


def test_geometric_decay_of_dz():
    tr = propagate_variational_discrete(linear_map(0.5), None, [1.0], [1.0], 10, None)
    assert np.allclose(tr.dz_norms, 0.5 ** np.arange(11), rtol=1e-14)
    assert tr.diagnostics["proof_violations"] == 0


def test_identity_map_keeps_dz_constant():
    tr = propagate_variational_discrete(linear_map(1.0), None, [2.0], [3.0], 25, None)
    assert np.allclose(tr.dz_norms, 3.0)


def test_variational_matches_paired_difference_quotient():
    sys = DiscreteSystem(1, f=lambda x, i, xi: 0.9 * np.sin(x),
                         jacobian=lambda x, i, xi: np.array([[0.9 * np.cos(x[0])]]))
    tr = propagate_variational_discrete(sys, None, [1.0], [1.0], 100, None)
    xa, xb = 1.0, 1.0 + 1e-7
    for _ in range(100):
        xa, xb = 0.9 * math.sin(xa), 0.9 * math.sin(xb)
    quotient = abs(xb - xa) / 1e-7
    assert abs(tr.dz_norms[-1] - quotient) / tr.dz_norms[-1] < 1e-4


def test_zero_displacement_stays_zero():
    tr = propagate_variational_discrete(linear_map(0.5), None, [1.0], [0.0], 5, None)
    assert np.all(np.isneginf(tr.log_dz)) and np.all(tr.dz_norms == 0.0)


def test_long_contracting_run_does_not_underflow():
    tr = propagate_variational_discrete(linear_map(1e-3), None, [1.0], [1.0], 400, None, stride=400)
    # ||dz|| = 1e-1200 is below the double range but its log is exact
    assert tr.log_dz[-1] == pytest.approx(400 * math.log(1e-3), rel=1e-12)


def test_constant_metric_conjugates_discrete_map():
    A = np.array([[0.5, 0.2], [0.0, 0.7]])
    th = np.array([[2.0, 0.0], [1.0, 1.0]])
    sys = DiscreteSystem(2, f=lambda x, i, xi: A @ x, jacobian=lambda x, i, xi: A)
    metric = Metric(2, theta=lambda t: th, lower_bound=0.3)
    dz0 = np.array([1.0, -0.5])
    tr = propagate_variational_discrete(sys, metric, [1.0, 1.0], dz0, 6, None)
    ref = th @ np.linalg.matrix_power(A, 6) @ np.linalg.solve(th, dz0)
    assert tr.dz_norms[-1] == pytest.approx(np.linalg.norm(ref), rel=1e-12)


def decay():
    return ContinuousSystem(1, f=lambda x, t, xi: -x, jacobian=lambda x, t, xi: np.array([[-1.0]]))


def test_rk4_exponential_oracle():
    tr = integrate_continuous(decay(), None, [1.0], [1.0], 1.0, h=1e-3)
    assert abs(tr.final[0] - math.exp(-1.0)) < 1e-9
    assert abs(tr.dz_norms[-1] - math.exp(-1.0)) < 1e-9


def test_zero_field_keeps_state():
    sys = ContinuousSystem(2, f=lambda x, t, xi: np.zeros(2))
    tr = integrate_continuous(sys, None, [1.0, -2.0], [1.0, 0.0], 3.0, h=0.1)
    assert np.all(tr.states == np.array([1.0, -2.0]))


def rate_system():
    return ContinuousSystem(1, f=lambda x, t, xi: xi[0] * x, jacobian=lambda x, t, xi: np.array([[xi[0]]]))


def _seed_with_cells(values):
    for seed in range(1000):
        p = coarse_grain_process(Partition(cell=1.0), two_point(-2, 0.5), seed, 0)
        if np.array_equal(p.draws(0, len(values))[:, 0], values):
            return p
    raise AssertionError("no seed found")


def test_piecewise_exponential_oracle():
    path = _seed_with_cells([-2.0, 0.5])
    tr = integrate_continuous(rate_system(), None, [1.5], [1.0], 2.0, path=path)
    assert abs(tr.final[0] - 1.5 * math.exp(-2.0) * math.exp(0.5)) < 1e-8


@given(st.integers(0, 10 ** 6), st.floats(0.3, 2.0))
def test_piecewise_exponential_oracle_random_paths(seed, cell):
    path = coarse_grain_process(Partition(cell=cell), uniform(-1, 1), seed, 0)
    T = 3.3
    tr = integrate_continuous(rate_system(), None, [1.0], [1.0], T, path=path)
    n = path.partition.n_cells(T)
    expo = sum(path.cell_value(k)[0] * (min(path.partition.boundary(k + 1), T) - path.partition.boundary(k))
               for k in range(n))
    assert tr.final[0] == pytest.approx(math.exp(expo), rel=1e-8)


@given(st.floats(0.05, 3.0), st.floats(0.5, 20.0), st.floats(1e-3, 0.5))
def test_grid_has_no_step_straddling_a_boundary(cell, T, h):
    part = Partition(cell=cell)
    bounds = part.boundaries_within(T)
    grid = step_grid(T, h, bounds)
    assert grid[0] == 0.0 and grid[-1] == T
    assert np.all(np.diff(grid) > 0) and np.all(np.diff(grid) <= h * (1 + 1e-9))
    for b in bounds:
        assert b in set(grid)
        k = np.searchsorted(grid, b)
        assert grid[k] == b


def test_default_step_resolves_cells():
    path = coarse_grain_process(Partition(cell=0.1), uniform(-1, 1), 0, 0)
    sys = ContinuousSystem(1, f=lambda x, t, xi: -x + xi)
    tr = integrate_continuous(sys, None, [0.0], [1.0], 0.5, path=path, stride=10 ** 6)
    # every cell boundary is saved even with a huge stride
    assert np.allclose(tr.times, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])


def test_continuous_growth_bounded_by_lambda_integral():
    sys = vdp_coupled(1.0, 1.0, uniform(0.1, 1.1))
    paths = sys.noise.path(3, 0)
    tr = integrate_continuous(sys, None, [2, 0, -1, 0.5], None, 5.0, path=paths, check_growth=True)
    assert tr.diagnostics["growth_violations"] == 0
    assert tr.diagnostics["max_growth_ratio"] <= 1.0


def test_pair_identical_inputs_have_zero_separation():
    sys = vdp_coupled(1.0, 1.0, uniform(0.1, 1.1))
    path = sys.noise.path(0, 0)
    _, _, sep = propagate_pair(sys, [1, 0, 0.5, 0], [1, 0, 0.5, 0], 3.0, path=path)
    assert np.all(sep == 0.0)


def test_pair_noise_cancels_for_linear_drift():
    sys = ContinuousSystem(1, f=lambda x, t, xi: -x + xi, jacobian=lambda x, t, xi: np.array([[-1.0]]))
    path = coarse_grain_process(Partition(cell=0.1), uniform(-1, 1), 4, 0)
    ta, tb, sep = propagate_pair(sys, [1.3], [0.8], 4.0, path=path)
    assert np.allclose(sep, 0.5 * np.exp(-ta.times), atol=1e-8)


def test_pair_discrete_with_two_paths():
    sys = DiscreteSystem(1, f=lambda x, i, xi: 0.5 * x + xi)
    pa = iid_sequence(uniform(-1, 1), 0, 0)
    pb = iid_sequence(uniform(-1, 1), 0, 0, stream=1)
    _, _, sep = propagate_pair(sys, [0.0], [0.0], 20, path=pa, path_b=pb)
    assert sep[0] == 0.0 and np.all(sep[1:] > 0)


def test_envelope_examples():
    assert np.array_equal(envelope_sequence([0.0] * 4, 1.0).Z, np.ones(5))
    env = envelope_sequence([-2.0, 0.5], 1.0)
    assert np.allclose(env.Z, [1.0, math.exp(-2.0), math.exp(-1.5)], rtol=1e-15)
    assert np.all(envelope_sequence([1.0, -3.0], 0.0).Z == 0.0)
    with pytest.raises(ValueError):
        envelope_sequence([math.nan], 1.0)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=50), st.floats(0.01, 10))
def test_envelope_recursion_is_exact(ints, z0):
    env = envelope_sequence(ints, z0)
    for k, v in enumerate(ints):
        assert env.Z[k + 1] == math.exp(v) * env.Z[k]
    assert np.allclose(env.log_Z, np.log(env.Z), atol=1e-9)


def test_trajectory_invariants_and_csv():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0]), np.zeros((2, 1)), np.array([0.0, math.inf]))
    tr = Trajectory(np.array([0.0, 0.5]), np.array([[1.0, 2.0], [0.1, 0.3]]), np.array([0.0, -math.inf]))
    buf = io.StringIO()
    tr.write_csv(buf)
    assert buf.getvalue() == "t,x1,x2,dz_norm\n0.0,1.0,2.0,1.0\n0.5,0.1,0.3,0.0\n"


def test_bit_identical_reruns():
    sys = vdp_coupled(1.0, 1.0, uniform(0.1, 1.1))
    a = integrate_continuous(sys, None, [2, 0, -1, 0.5], None, 2.0, path=sys.noise.path(8, 2))
    b = integrate_continuous(sys, None, [2, 0, -1, 0.5], None, 2.0, path=sys.noise.path(8, 2))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.log_dz, b.log_dz)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
def test_overflow_aborts_with_diagnostics():
    sys = ContinuousSystem(1, f=lambda x, t, xi: x * x, jacobian=lambda x, t, xi: np.array([[2.0 * x[0]]]))
    with pytest.raises(PropagationError) as e:
        integrate_continuous(sys, None, [10.0], [1.0], 1.0, h=0.01)
    assert e.value.step is not None and e.value.time is not None
