"""Pure numpy implementations of the hot kernels.

Mirrors ``_kernels.pyx`` function by function; used when the compiled
extension is missing or ``SELFORDER_PURE_PYTHON`` is set.
"""

import numpy as np


def sinkhorn_scaling(K, a, b, max_iters, tol):
    """Alternating row/column scaling of the Gibbs kernel ``K``.

    Returns ``(us, vs, err)`` where ``us`` holds ``u_1..u_T`` and ``vs``
    holds ``v_0..v_T`` (``v_0`` is all ones).  ``err`` is the final maximum
    row-marginal violation; column marginals are exact after every sweep.
    """
    n = K.shape[0]
    us = []
    vs = [np.ones(n)]
    z = K @ vs[0]
    err = np.inf
    for _ in range(max(1, max_iters)):
        u = a / z
        v = b / (K.T @ u)
        us.append(u)
        vs.append(v)
        z = K @ v
        err = float(np.max(np.abs(u * z - a)))
        if err < tol:
            break
    return np.array(us), np.array(vs), err


def sinkhorn_scaling_backward(K, us, vs, a, b, dgamma):
    u, v = us[-1], vs[-1]
    dK = dgamma * np.outer(u, v)
    gk = dgamma * K
    du = gk @ v
    dv = gk.T @ u
    T = us.shape[0]
    dws = np.empty_like(us)
    dzs = np.empty_like(us)
    for t in range(T - 1, -1, -1):
        dw = -dv * vs[t + 1] ** 2 / b
        du = du + K @ dw
        dz = -du * us[t] ** 2 / a
        dv = K.T @ dz
        du = np.zeros_like(du)
        dws[t] = dw
        dzs[t] = dz
    dK += us.T @ dws + dzs.T @ vs[:-1]
    return dK


def _lse_rows(x):
    m = x.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=1, keepdims=True)))[:, 0]


def sinkhorn_log(C, eps, a, b, max_iters, tol):
    """Log-domain Sinkhorn on dual potentials; returns ``(fs, gs, err)``."""
    n = C.shape[0]
    la = np.log(a)
    lb = np.log(b)
    fs = []
    gs = [np.zeros(n)]
    r = _lse_rows((gs[0][None, :] - C) / eps)
    err = np.inf
    for _ in range(max(1, max_iters)):
        f = eps * la - eps * r
        g = eps * lb - eps * _lse_rows(((f[:, None] - C) / eps).T)
        fs.append(f)
        gs.append(g)
        r = _lse_rows((g[None, :] - C) / eps)
        err = float(np.max(np.abs(np.exp(f / eps + r) - a)))
        if err < tol:
            break
    return np.array(fs), np.array(gs), err


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def sinkhorn_log_backward(C, eps, fs, gs, dgamma):
    f, g = fs[-1], gs[-1]
    gamma = np.exp((f[:, None] + g[None, :] - C) / eps)
    w = dgamma * gamma / eps
    dC = -w
    df = w.sum(axis=1)
    dg = w.sum(axis=0)
    for t in range(fs.shape[0] - 1, -1, -1):
        # column softmax over i of (f_t - C)
        Q = _softmax_rows(((fs[t][:, None] - C) / eps).T).T
        df = df - Q @ dg
        dC += Q * dg[None, :]
        R = _softmax_rows((gs[t][None, :] - C) / eps)
        dg = -(R.T @ df)
        dC += R * df[:, None]
        df = np.zeros_like(df)
    return dC


def fps_order(points, n, start):
    """Greedy farthest-point indices; lowest index wins distance ties."""
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty(n, dtype=np.int64)
    out[0] = start
    d = ((pts - pts[start]) ** 2).sum(axis=1)
    for k in range(1, n):
        i = int(np.argmax(d))
        out[k] = i
        d = np.minimum(d, ((pts - pts[i]) ** 2).sum(axis=1))
    return out


def nn_sqdist(x, y):
    """Squared distance from each row of ``x`` to its nearest row of ``y``."""
    d = (x * x).sum(axis=1)[:, None] - 2.0 * x @ y.T + (y * y).sum(axis=1)[None, :]
    idx = np.argmin(d, axis=1)
    diff = x - y[idx]
    return (diff * diff).sum(axis=1), idx.astype(np.int64)


def argmax_counts(F):
    """How many columns of ``F`` each row wins (lowest index on ties)."""
    return np.bincount(np.argmax(F, axis=0), minlength=F.shape[0]).astype(np.int64)
