"""Pure-Python fallback for the compiled kernels.

Same signatures and operation order as ``_ckernels.pyx``; paths are
vectorized along the leading axis instead of looped in C.
"""
import numpy as np

GAIN = 0
CUBIC_ADDITIVE = 1
VDP = 2


def _field(model, p, x, xi):
    if model == GAIN:
        return xi[:, 0:1] * x
    if model == CUBIC_ADDITIVE:
        return -p[0] * x - p[1] * (x * x * x) + xi
    a, w2 = p[0], p[1] * p[1]
    x1, v1, x2, v2 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    e1, e2 = xi[:, 0], xi[:, 1]
    out = np.empty_like(x)
    out[:, 0] = v1
    out[:, 1] = -a * (x1 * x1 - 1.0) * v1 - w2 * x1 + a * e1 * (v2 - v1)
    out[:, 2] = v2
    out[:, 3] = -a * (x2 * x2 - 1.0) * v2 - w2 * x2 + a * e2 * (v1 - v2)
    return out


def _jvp(model, p, x, xi, d):
    if model == GAIN:
        return xi[:, 0:1] * d
    if model == CUBIC_ADDITIVE:
        return (-p[0] - 3.0 * p[1] * (x * x)) * d
    a, w2 = p[0], p[1] * p[1]
    x1, v1, x2, v2 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    e1, e2 = xi[:, 0], xi[:, 1]
    out = np.empty_like(d)
    out[:, 0] = d[:, 1]
    out[:, 1] = ((-2.0 * a * x1 * v1 - w2) * d[:, 0] + (-a * (x1 * x1 - 1.0) - a * e1) * d[:, 1]
                 + a * e1 * d[:, 3])
    out[:, 2] = d[:, 3]
    out[:, 3] = ((-2.0 * a * x2 * v2 - w2) * d[:, 2] + (-a * (x2 * x2 - 1.0) - a * e2) * d[:, 3]
                 + a * e2 * d[:, 1])
    return out


def _sqnorm(d):
    s = d[:, 0] * d[:, 0]
    for k in range(1, d.shape[1]):
        s = s + d[:, k] * d[:, k]
    return s


def _renormalize(d, logacc):
    nrm = np.sqrt(_sqnorm(d))
    zero = nrm == 0.0
    safe = np.where(zero, 1.0, nrm)
    with np.errstate(divide="ignore"):
        logacc = np.where(zero, -np.inf, logacc + np.log(safe))
    return d / safe[:, None], logacc


def rk4(model, params, grid, step_cell, cell_values, x0, dz0, save_idx):
    """Jump-aligned fixed-step RK4 on (x, dz) for a batch of paths.

    Returns ``states (P, S, n)``, ``log_dz (P, S)`` and ``bad (P,)`` holding
    the first step with a non-finite state (-1 if none).
    """
    p = np.asarray(params, dtype=float)
    grid = np.asarray(grid, dtype=float)
    step_cell = np.asarray(step_cell, dtype=np.int64)
    cv = np.asarray(cell_values, dtype=float)
    x = np.array(x0, dtype=float)
    P, n = x.shape
    d, logacc = _renormalize(np.array(dz0, dtype=float), np.zeros(P))
    save_idx = np.asarray(save_idx, dtype=np.int64)
    S = save_idx.size
    states = np.empty((P, S, n))
    logdz = np.empty((P, S))
    bad = np.full(P, -1, dtype=np.int64)
    K = grid.size - 1
    s = 0
    while s < S and save_idx[s] == 0:
        states[:, s] = x
        logdz[:, s] = logacc
        s += 1
    for k in range(K):
        h = grid[k + 1] - grid[k]
        xi = cv[:, step_cell[k], :]
        k1 = _field(model, p, x, xi)
        l1 = _jvp(model, p, x, xi, d)
        xs = x + 0.5 * h * k1
        k2 = _field(model, p, xs, xi)
        l2 = _jvp(model, p, xs, xi, d + 0.5 * h * l1)
        xs = x + 0.5 * h * k2
        k3 = _field(model, p, xs, xi)
        l3 = _jvp(model, p, xs, xi, d + 0.5 * h * l2)
        xs = x + h * k3
        k4 = _field(model, p, xs, xi)
        l4 = _jvp(model, p, xs, xi, d + h * l3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        d = d + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
        d, logacc = _renormalize(d, logacc)
        fresh = (bad < 0) & ~np.all(np.isfinite(x), axis=1)
        bad[fresh] = k + 1
        while s < S and save_idx[s] == k + 1:
            states[:, s] = x
            logdz[:, s] = logacc
            s += 1
    return states, logdz, bad


def gain_iterate(gains, x0, dz0, save_idx):
    """x_{i+1} = a_i x_i with dz propagated alongside.

    Returns ``states (P, S, n)``, ``log_dz (P, S)`` and the per-path count of
    steps where log||dz_{i+1}|| exceeds log(|a_i| ||dz_i||) + log(1 + 1e-9).
    """
    a = np.asarray(gains, dtype=float)
    x = np.array(x0, dtype=float)
    P, n = x.shape
    d, logacc = _renormalize(np.array(dz0, dtype=float), np.zeros(P))
    save_idx = np.asarray(save_idx, dtype=np.int64)
    S = save_idx.size
    states = np.empty((P, S, n))
    logdz = np.empty((P, S))
    viol = np.zeros(P, dtype=np.int64)
    slack = np.log1p(1e-9)
    s = 0
    while s < S and save_idx[s] == 0:
        states[:, s] = x
        logdz[:, s] = logacc
        s += 1
    for i in range(a.shape[1]):
        ai = a[:, i]
        x = ai[:, None] * x
        prev = logacc
        d, logacc = _renormalize(ai[:, None] * d, logacc)
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = prev + np.log(np.abs(ai)) + slack
            viol += (logacc > bound) & np.isfinite(logacc)
        while s < S and save_idx[s] == i + 1:
            states[:, s] = x
            logdz[:, s] = logacc
            s += 1
    return states, logdz, viol
