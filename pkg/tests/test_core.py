import math

import numpy as np
import pytest

from stocon.core import (
    ContinuousSystem,
    DiscreteSystem,
    Metric,
    NonFiniteError,
    VariationalState,
    check_metric,
    make_metric_identity,
    state_vector,
    validate_system,
)
from stocon.noise import two_point, uniform
from stocon.scenarios import (
    cubic_additive,
    linear_random_gain,
    linear_random_rate,
    quadratic_objective,
    stochastic_gradient,
    vdp_coupled,
)
from stocon.noise import Partition


def test_state_vector_is_readonly_float():
    x = state_vector([1, 2, 3])
    assert x.dtype == float and x.shape == (3,)
    with pytest.raises(ValueError):
        x[0] = 5.0


@pytest.mark.parametrize("bad", [[math.nan], [1.0, math.inf], [-math.inf]])
def test_state_vector_rejects_non_finite(bad):
    with pytest.raises(NonFiniteError):
        state_vector(bad)


def test_state_vector_rejects_empty_and_wrong_dim():
    with pytest.raises(ValueError):
        state_vector([])
    with pytest.raises(ValueError):
        state_vector([1.0, 2.0], dim=3)


def test_identity_metric():
    m = make_metric_identity(3)
    assert np.array_equal(m.theta(2.5), np.eye(3))
    assert np.array_equal(m.theta_dot(0.0), np.zeros((3, 3)))
    assert m.lower_bound == 1.0 and m.is_identity


def test_identity_metric_rejects_zero_dim():
    with pytest.raises(ValueError):
        make_metric_identity(0)


def test_check_metric_samples_lower_bound():
    m = Metric(2, theta=lambda t: np.diag([2.0, 1.0 + t]), lower_bound=1.0)
    rep = check_metric(m, np.linspace(0, 3, 7))
    assert rep["ok"] and rep["min_eig"] == pytest.approx(1.0)
    bad = Metric(2, theta=lambda t: np.diag([2.0, 0.5]), lower_bound=1.0)
    assert not check_metric(bad, [0.0])["ok"]


def test_variational_state_zero_norm_is_minus_inf():
    assert VariationalState([1.0, 2.0], [0.0, 0.0]).log_norm == -math.inf
    assert VariationalState([1.0], [math.e]).log_norm == pytest.approx(1.0)
    with pytest.raises(ValueError):
        VariationalState([1.0, 2.0], [1.0])


def _probes(dim, noise_dim, n=20, seed=0, noise_scale=1.0):
    rng = np.random.default_rng(seed)
    return [(rng.uniform(-2, 2, dim), float(rng.integers(0, 10)), noise_scale * rng.uniform(-1, 1.5, noise_dim))
            for _ in range(n)]


@pytest.mark.parametrize("build,dim,m", [
    (lambda: linear_random_gain(two_point(0.5, 1.5)), 1, 1),
    (lambda: stochastic_gradient(quadratic_objective([[2.0, 0.5], [0.5, 1.0]]), 0.1,
                                 two_point(-1, 1), 2)[0], 2, 2),
    (lambda: linear_random_rate(two_point(-2, 0.5), Partition(cell=1.0)), 1, 1),
    (lambda: vdp_coupled(1.3, 0.7, uniform(0.1, 1.1)), 4, 2),
    (lambda: cubic_additive(1.0, 1.0, dim=2), 2, 2),
])
def test_every_scenario_jacobian_matches_finite_differences(build, dim, m):
    rep = validate_system(build(), _probes(dim, m))
    assert rep.ok, rep.max_discrepancy
    assert rep.max_discrepancy < 1e-5


def test_validate_system_detects_wrong_jacobian():
    sys = DiscreteSystem(1, f=lambda x, i, xi: np.sin(x), jacobian=lambda x, i, xi: np.array([[1.0]]))
    rep = validate_system(sys, _probes(1, 1))
    assert not rep.ok and rep.max_discrepancy > 0.1


def test_validate_system_records_non_finite_outputs():
    sys = ContinuousSystem(1, f=lambda x, t, xi: np.log(x))
    rep = validate_system(sys, [(np.array([-1.0]), 0.0, np.zeros(1)), (np.array([2.0]), 0.0, np.zeros(1))])
    assert rep.fd_only and len(rep.non_finite) == 1 and not rep.ok
