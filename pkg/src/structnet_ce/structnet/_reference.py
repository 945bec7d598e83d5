"""Pure numpy backend: batched loss/gradient and one Adam epoch.

Selected automatically when the compiled kernel is unavailable, and used as
the reference the kernel is tested against.
"""

from __future__ import annotations

import numpy as np

from .model import DEGENERATE_NORM, ClassifierShape, DegenerateWeightsError, classifier_backward, classifier_forward

NAME = "python"


def _cmod(u, p):
    return u - p * np.floor(u / p + 0.5)


def fold_batch(r, Wk, i, a):
    """Batched interference fold; ``Wk``: ``(B, nr, nt)``, ``i``: target streams ``(B,)``."""
    B, nt = r.shape[0], Wk.shape[2]
    L = np.zeros((B, nt), dtype=complex)
    for j in range(nt):
        act = i != j
        if not act.any():
            continue
        wj = Wk[:, :, j]
        nrm = np.sum(np.abs(wj) ** 2, axis=1)
        if np.any(np.sqrt(nrm[act]) <= DEGENERATE_NORM):
            raise DegenerateWeightsError(f"interferer column {j} has vanished")
        u = np.sum(wj.conj() * r, axis=1) / np.where(act, nrm, 1.0)
        off = u - (_cmod(u.real, 2 * a) + 1j * _cmod(u.imag, 2 * a))
        off = np.where(act, off, 0.0)
        r = r - wj * off[:, None]
        L[:, j] = off
    return r, L


def feature_order_batch(i, nt):
    return np.argsort(np.arange(nt)[None, :] != np.asarray(i)[:, None], axis=1, kind="stable")


def zf_coordinates(z, Wk):
    Wh = np.conj(np.swapaxes(Wk, 1, 2))
    G = Wh @ Wk
    try:
        c = np.linalg.solve(G, (Wh @ z[:, :, None]))[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise DegenerateWeightsError("channel-layer columns are linearly dependent") from exc
    return c, G


def zf_features(z, Wk, i, a):
    """Coordinates in the ``Wk`` basis, target stream first, re/im interleaved, over ``a``."""
    c, G = zf_coordinates(z, Wk)
    co = np.take_along_axis(c, feature_order_batch(i, Wk.shape[2]), axis=1)
    feats = np.empty((z.shape[0], 2 * Wk.shape[2]))
    feats[:, 0::2] = co.real / a
    feats[:, 1::2] = co.imag / a
    return c, G, feats


def _forward(W, theta, shape: ClassifierShape, data, idx, a):
    t, k = data["t"][idx], data["k"][idx]
    i, d, b = data["stream"][idx], data["dim"][idx], data["label"][idx]
    B = idx.size
    rows = np.arange(B)
    y = data["Yp"][t, k]
    x = data["Xp"][t, k]
    Wk = W[k]
    nt = Wk.shape[2]

    rot = np.where(d == 0, 1.0 + 0j, -1j)
    ed = np.where(d == 0, 1.0 + 0j, 1j)
    s_i = x[rows, i] - b * a * ed
    wi = Wk[rows, :, i]
    r = rot[:, None] * (y - wi * s_i[:, None])

    z, L = fold_batch(r, Wk, i, a)
    c, G, feats = zf_features(z, Wk, i, a)
    order = feature_order_batch(i, nt)
    logit, cache = classifier_forward(theta, shape, feats)
    return dict(k=k, i=i, b=b, rows=rows, rot=rot, s_i=s_i, Wk=Wk, G=G, z=z, c=c, L=L,
                order=order, logit=logit, cache=cache)


def logits(W, theta, shape, data, idx, a):
    return _forward(W, theta, shape, data, idx, a)["logit"]


def smoothness_penalty(W, lam):
    """``lam * sum_k |W[k+1] - W[k]|^2`` and its gradient."""
    if lam == 0 or W.shape[0] < 2:
        return 0.0, np.zeros_like(W)
    D = W[1:] - W[:-1]
    g = np.zeros_like(W)
    g[1:] += 2 * lam * D
    g[:-1] -= 2 * lam * D
    return float(lam * np.sum(np.abs(D) ** 2)), g


def loss_and_grad(W, theta, shape, data, idx, a, lam):
    """Mean BCE over the batch plus smoothness penalty.

    Returns ``(loss, gW, gtheta, bce)``; ``gW`` is complex with
    ``dL/dRe W + j dL/dIm W`` and ``bce`` is the data term alone.
    """
    f = _forward(W, theta, shape, data, idx, a)
    B = idx.size
    b, logit = f["b"], f["logit"]
    m = -b * logit
    bce = np.logaddexp(0.0, m)
    dlogit = -b * np.exp(m - np.logaddexp(0.0, m)) / B
    gtheta, dfeats = classifier_backward(theta, shape, f["cache"], dlogit)

    nt = f["Wk"].shape[2]
    gco = (dfeats[:, 0::2] + 1j * dfeats[:, 1::2]) / a
    gc = np.zeros_like(gco)
    np.put_along_axis(gc, f["order"], gco, axis=1)

    Wk, G, z, c = f["Wk"], f["G"], f["z"], f["c"]
    p = np.linalg.solve(G, gc[:, :, None])[:, :, 0]
    Wp = (Wk @ p[:, :, None])[:, :, 0]
    e = z - (Wk @ c[:, :, None])[:, :, 0]
    gWk = e[:, :, None] * p.conj()[:, None, :] - Wp[:, :, None] * c.conj()[:, None, :]
    gz = Wp
    gWk -= gz[:, :, None] * f["L"].conj()[:, None, :]
    rows, i = f["rows"], f["i"]
    gWk[rows, :, i] -= np.conj(f["rot"] * f["s_i"])[:, None] * gz

    gW = np.zeros_like(W)
    np.add.at(gW, f["k"], gWk)
    pen, gpen = smoothness_penalty(W, lam)
    return float(bce.mean()) + pen, gW + gpen, gtheta, float(bce.mean())


def _adam(param, grad, m, v, step, lr, b1, b2, eps):
    m *= b1
    m += (1 - b1) * grad
    v *= b2
    v += (1 - b2) * grad * grad
    mhat = m / (1 - b1 ** step)
    vhat = v / (1 - b2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def run_epoch(state, data, perm, opts):
    """One pass over ``perm`` in mini-batches; updates ``state`` in place.

    Returns the sample-weighted means of the batch losses and of their
    cross-entropy terms.
    """
    W, theta = state.W, state.theta
    Wr = W.reshape(-1).view(np.float64)
    total = 0.0
    total_bce = 0.0
    n = perm.size
    bs = opts.batch_size
    for start in range(0, n, bs):
        idx = perm[start:start + bs]
        loss, gW, gth, bce = loss_and_grad(W, theta, state.shape, data, idx, opts.a, opts.smoothness)
        total += loss * idx.size
        total_bce += bce * idx.size
        state.step_theta += 1
        _adam(theta, gth, state.m_theta, state.v_theta, state.step_theta, opts.lr_classifier,
              opts.beta1, opts.beta2, opts.adam_eps)
        if opts.update_w:
            state.step_w += 1
            _adam(Wr, gW.reshape(-1).view(np.float64), state.m_w, state.v_w, state.step_w, opts.lr_channel,
                  opts.beta1, opts.beta2, opts.adam_eps_channel)
    return total / max(n, 1), total_bce / max(n, 1)
