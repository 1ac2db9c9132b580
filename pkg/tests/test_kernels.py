import os
import subprocess
import sys

import numpy as np
import pytest

from stocon import kernels
from stocon.ensemble import run_ensemble
from stocon.noise import Partition, two_point, uniform
from stocon.scenarios import cubic_additive, linear_random_gain, linear_random_rate, vdp_coupled

needs_compiled = pytest.mark.skipif(not kernels.compiled_available(), reason="extension not built")

CASES = [
    (lambda: linear_random_rate(two_point(-2, 0.5), Partition(cell=1.0)), [1.0], 12.0),
    (lambda: cubic_additive(1.0, 2.0, dim=3), [1.0, -0.5, 2.0], 3.0),
    (lambda: vdp_coupled(1.0, 1.0, uniform(0.1, 1.1)), [2.0, 0.0, -1.0, 0.5], 4.0),
    (lambda: linear_random_gain(two_point(0.5, 1.5)), [1.0], 500),
]


@pytest.mark.parametrize("build,x0,T", CASES)
def test_fallback_kernel_matches_reference_engine(build, x0, T):
    sysm = build()
    ref = run_ensemble(sysm, x0, T, 5, seed=2, backend="generic", threads=1)
    got = run_ensemble(sysm, x0, T, 5, seed=2, backend="python", threads=1)
    assert got.backend == "python" and ref.backend == "generic"
    assert np.array_equal(ref.times, got.times)
    assert np.allclose(got.states, ref.states, rtol=1e-11, atol=1e-13)
    assert np.allclose(got.log_dz, ref.log_dz, rtol=1e-11, atol=1e-11)


@needs_compiled
@pytest.mark.parametrize("build,x0,T", CASES)
def test_compiled_kernel_matches_fallback(build, x0, T):
    sysm = build()
    a = run_ensemble(sysm, x0, T, 7, seed=4, backend="python", threads=1)
    b = run_ensemble(sysm, x0, T, 7, seed=4, backend="cython", threads=1)
    assert b.backend == "cython"
    assert np.allclose(a.states, b.states, rtol=1e-13, atol=1e-15)
    assert np.allclose(a.log_dz, b.log_dz, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("name", ["python"] + (["cython"] if kernels.compiled_available() else []))
def test_gain_iterate_counts_no_violations_and_reports_zero(name):
    gains = np.array([[0.5, 0.0, 2.0], [1.5, 1.5, 0.5]])
    st, ld, viol = kernels.gain_iterate(gains, np.ones((2, 1)), np.ones((2, 1)), np.arange(4),
                                        backend_name=name)
    assert np.all(viol == 0)
    assert np.array_equal(ld[0, 2:], [-np.inf, -np.inf])
    assert np.allclose(np.exp(ld[1]), [1.0, 1.5, 2.25, 1.125])


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning", "ignore:invalid value:RuntimeWarning")
@pytest.mark.parametrize("name", ["python"] + (["cython"] if kernels.compiled_available() else []))
def test_rk4_kernel_flags_overflow(name):
    grid = np.linspace(0, 1, 11)
    cv = np.full((1, 1, 1), 1e3)
    st, ld, bad = kernels.rk4("gain", np.zeros(0), grid, np.zeros(10, dtype=np.int64), cv,
                              np.full((1, 1), 1e300), np.ones((1, 1)), np.arange(11), backend_name=name)
    assert bad[0] == 1


def test_pure_python_selected_by_environment():
    env = dict(os.environ, STOCON_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from stocon import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend_name():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
