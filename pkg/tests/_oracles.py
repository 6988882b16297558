"""Shared test oracles: finite differences and dense reference models."""

import numpy as np

from sgsgnn import autodiff as ad


def finite_difference_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def check_grads(build_scalar, arrays, tol=1e-6, eps=1e-6):
    """Compare tape gradients of build_scalar(params) to finite differences.

    ``arrays`` maps name -> initial ndarray. build_scalar receives a dict
    of parameter tensors and must return a scalar Tensor.
    """
    params = {k: ad.parameter(np.array(v, dtype=np.float64), name=k) for k, v in arrays.items()}
    loss = build_scalar(params)
    ad.backward(loss)
    worst = 0.0
    for k, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.value)

        def scalar_at(x, k=k):
            saved = params[k].value
            params[k].value = x
            with ad.no_grad():
                out = float(build_scalar(params).value)
            params[k].value = saved
            return out

        numeric = finite_difference_grad(scalar_at, p.value.copy(), eps=eps)
        err = relative_error(analytic, numeric)
        assert err < tol, f"gradient mismatch for {k}: rel err {err:.3e}"
        worst = max(worst, err)
    return worst


def dense_weighted_gcn(w0, w1, edge_u, edge_v, weights, x, b0=None, b1=None):
    """Reference two-layer GCN via explicit dense matrices."""
    n = x.shape[0]
    a = np.zeros((n, n))
    for u, v, w in zip(edge_u, edge_v, weights):
        a[u, v] += w
        a[v, u] += w
    a_hat = a + np.eye(n)
    d = a_hat.sum(axis=1)
    s = 1.0 / np.sqrt(d)
    norm = s[:, None] * a_hat * s[None, :]
    h = norm @ x @ w0
    if b0 is not None:
        h = h + b0
    h = np.maximum(h, 0.0)
    logits = norm @ h @ w1
    if b1 is not None:
        logits = logits + b1
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True), h


def dense_edge_scores(enc_w0, enc_w1, mlp_w0, mlp_b0, mlp_w1, mlp_b1,
                      edge_u, edge_v, sub_u, sub_v, x):
    """Reference straight-line evaluation of the structural scorer."""
    n = x.shape[0]
    a = np.zeros((n, n))
    for u, v in zip(sub_u, sub_v):
        a[u, v] += 1.0
        a[v, u] += 1.0
    a_hat = a + np.eye(n)
    s = 1.0 / np.sqrt(a_hat.sum(axis=1))
    norm = s[:, None] * a_hat * s[None, :]
    h = np.maximum(norm @ x @ enc_w0, 0.0)
    h = norm @ h @ enc_w1
    scores = np.zeros(len(edge_u))
    for i, (u, v) in enumerate(zip(edge_u, edge_v)):
        pair = np.concatenate([h[u] - h[v], h[u] * h[v]])
        z = np.maximum(pair @ mlp_w0 + mlp_b0, 0.0)
        t = float((z @ mlp_w1 + mlp_b1)[0])
        scores[i] = 1.0 / (1.0 + np.exp(-t))
    return scores
