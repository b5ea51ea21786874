"""Pure-numpy kernels for the certificate network.

Batched over samples.  The flat parameter layout is
``W1 (h,p) | b1 (h) | W2 (h,h) | b2 (h) | W3 (q,h) | b3 (q)`` with
``q = 2 p^2``, every matrix row-major.  ``L(x)`` is the output reshaped
row-major to ``(2p, p)``.
"""
import numpy as np


def unpack(theta, p, h):
    q = 2 * p * p
    i = 0
    W1 = theta[i:i + h * p].reshape(h, p); i += h * p
    b1 = theta[i:i + h]; i += h
    W2 = theta[i:i + h * h].reshape(h, h); i += h * h
    b2 = theta[i:i + h]; i += h
    W3 = theta[i:i + q * h].reshape(q, h); i += q * h
    b3 = theta[i:i + q]
    return W1, b1, W2, b2, W3, b3


def _forward(theta, p, h, X):
    W1, b1, W2, b2, W3, b3 = unpack(theta, p, h)
    a1 = np.tanh(X @ W1.T + b1)
    a2 = np.tanh(a1 @ W2.T + b2)
    L = (a2 @ W3.T + b3).reshape(-1, 2 * p, p)
    return a1, a2, L


def value_and_grad(theta, p, h, X):
    """``V(x)`` and ``grad_x V(x)`` for each row of ``X``."""
    W1, b1, W2, b2, W3, b3 = unpack(theta, p, h)
    a1, a2, L = _forward(theta, p, h, X)
    y = np.einsum("nij,nj->ni", L, X)
    V = np.einsum("ni,ni->n", y, y) + np.einsum("ni,ni->n", X, X)
    # pull vec(y x^T) back through the network to get the d L / d x term
    g = (y[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)
    d2 = (g @ W3) * (1.0 - a2 * a2)
    d1 = (d2 @ W2) * (1.0 - a1 * a1)
    G = 2.0 * X + 2.0 * np.einsum("nij,ni->nj", L, y) + 2.0 * (d1 @ W1)
    return V, G


def decrease_terms(theta, p, h, X, U, eta):
    """``<grad V(x), u> + eta V(x)`` per sample."""
    V, G = value_and_grad(theta, p, h, X)
    return np.einsum("ni,ni->n", G, U) + eta * V


def loss_and_grad(theta, p, h, X, U, eta):
    """Sum of ``relu(<grad V(x), u> + eta V(x))`` and its gradient in theta.

    The directional derivative ``<grad V, u>`` is carried forward as a tangent
    through the MLP; the reverse sweep then runs over both primal and tangent
    paths.  ReLU'(0) is taken as 0.
    """
    W1, b1, W2, b2, W3, b3 = unpack(theta, p, h)
    n = X.shape[0]
    z1 = X @ W1.T + b1
    a1 = np.tanh(z1)
    s1 = 1.0 - a1 * a1
    a2 = np.tanh(a1 @ W2.T + b2)
    s2 = 1.0 - a2 * a2
    L = (a2 @ W3.T + b3).reshape(n, 2 * p, p)
    # tangent along u
    t1 = U @ W1.T
    ta1 = s1 * t1
    t2 = ta1 @ W2.T
    ta2 = s2 * t2
    Ld = (ta2 @ W3.T).reshape(n, 2 * p, p)

    y = np.einsum("nij,nj->ni", L, X)
    yd = np.einsum("nij,nj->ni", L, U) + np.einsum("nij,nj->ni", Ld, X)
    s = 2.0 * np.einsum("ni,ni->n", X, U) + 2.0 * np.einsum("ni,ni->n", y, yd) \
        + eta * (np.einsum("ni,ni->n", y, y) + np.einsum("ni,ni->n", X, X))
    active = s > 0.0
    loss = float(np.sum(s[active]))
    grad = np.zeros_like(theta)
    if not np.any(active):
        return loss, grad

    X, U = X[active], U[active]
    a1, s1, a2, s2 = a1[active], s1[active], a2[active], s2[active]
    t1, ta1, t2, ta2 = t1[active], ta1[active], t2[active], ta2[active]
    y, yd = y[active], yd[active]
    m = X.shape[0]

    gy = 2.0 * yd + 2.0 * eta * y
    go = (gy[:, :, None] * X[:, None, :] + 2.0 * y[:, :, None] * U[:, None, :]).reshape(m, -1)
    god = (2.0 * y[:, :, None] * X[:, None, :]).reshape(m, -1)

    gW3 = go.T @ a2 + god.T @ ta2
    gb3 = go.sum(axis=0)
    ga2 = go @ W3
    gta2 = god @ W3
    gt2 = s2 * gta2
    ga2 = ga2 - 2.0 * a2 * t2 * gta2
    gz2 = s2 * ga2
    gW2 = gz2.T @ a1 + gt2.T @ ta1
    gb2 = gz2.sum(axis=0)
    ga1 = gz2 @ W2
    gta1 = gt2 @ W2
    gt1 = s1 * gta1
    ga1 = ga1 - 2.0 * a1 * t1 * gta1
    gz1 = s1 * ga1
    gW1 = gz1.T @ X + gt1.T @ U
    gb1 = gz1.sum(axis=0)
    grad[:] = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])
    return loss, grad
