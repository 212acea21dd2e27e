"""A deliberately plain re-implementation of the tagger forward pass.

Every parameter carries a leading K axis so K perturbed copies of the model
are evaluated in one sweep. It shares no code with ``numtag.tagger`` beyond
the parameter naming, and is used only as a finite-difference oracle.
"""

import numpy as np


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def _gru(x, P, prefix, reverse):
    # x: (K, B, T, D) -> (K, B, T, H)
    K, B, T, _ = x.shape
    H = P[f"{prefix}.U_z"].shape[-1]
    h = np.zeros((K, B, H))
    out = np.zeros((K, B, T, H))
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        xt = x[:, :, t]
        z = _sig(np.einsum("kbd,kdh->kbh", xt, P[f"{prefix}.W_z"])
                 + np.einsum("kbh,khg->kbg", h, P[f"{prefix}.U_z"]) + P[f"{prefix}.b_z"][:, None])
        r = _sig(np.einsum("kbd,kdh->kbh", xt, P[f"{prefix}.W_r"])
                 + np.einsum("kbh,khg->kbg", h, P[f"{prefix}.U_r"]) + P[f"{prefix}.b_r"][:, None])
        cand = np.tanh(np.einsum("kbd,kdh->kbh", xt, P[f"{prefix}.W_h"])
                       + np.einsum("kbh,khg->kbg", r * h, P[f"{prefix}.U_h"]) + P[f"{prefix}.b_h"][:, None])
        h = (1.0 - z) * h + z * cand
        out[:, :, t] = h
    return out


def reference_losses(P, idx, labels, dropout_mask=None):
    """Mean token cross-entropy for each of the K parameter copies in ``P``."""
    K = P["embedding"].shape[0]
    x = P["embedding"][:, idx]  # (K, B, T, E)
    for layer in ("gru1", "gru2"):
        x = np.concatenate([_gru(x, P, f"{layer}.fw", False), _gru(x, P, f"{layer}.bw", True)], axis=-1)
    if dropout_mask is not None:
        x = x * dropout_mask[None]
    logits = np.einsum("kbtd,kdc->kbtc", x, P["dense.W"]) + P["dense.b"][:, None, None]
    logits = logits - logits.max(axis=-1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, np.broadcast_to(labels[None, ..., None], (K, *labels.shape, 1)), axis=-1)
    return -picked[..., 0].reshape(K, -1).mean(axis=1)


def flatten(params):
    names = list(params)
    return names, np.concatenate([params[n].ravel() for n in names])


def unflatten_batch(names, shapes, thetas):
    """``thetas`` (K, P) -> dict of arrays with a leading K axis."""
    out, pos = {}, 0
    for n in names:
        size = int(np.prod(shapes[n]))
        out[n] = thetas[:, pos:pos + size].reshape(len(thetas), *shapes[n])
        pos += size
    return out


def central_difference(params, idx, labels, dropout_mask=None, step=1e-5, chunk=1024):
    """Central-difference gradient of the reference loss for every coordinate."""
    names, theta = flatten(params)
    shapes = {n: params[n].shape for n in names}
    grad = np.empty_like(theta)
    for lo in range(0, theta.size, chunk):
        hi = min(theta.size, lo + chunk)
        k = hi - lo
        plus = np.repeat(theta[None], k, axis=0)
        minus = plus.copy()
        cols = np.arange(lo, hi)
        plus[np.arange(k), cols] += step
        minus[np.arange(k), cols] -= step
        lp = reference_losses(unflatten_batch(names, shapes, plus), idx, labels, dropout_mask)
        lm = reference_losses(unflatten_batch(names, shapes, minus), idx, labels, dropout_mask)
        grad[lo:hi] = (lp - lm) / (2 * step)
    return {n: g.reshape(shapes[n]) for n, g in zip(names, np.split(grad, np.cumsum([np.prod(shapes[n]) for n in names])[:-1]))}


def base_loss(params, idx, labels, dropout_mask=None):
    names, theta = flatten(params)
    shapes = {n: params[n].shape for n in names}
    return float(reference_losses(unflatten_batch(names, shapes, theta[None]), idx, labels, dropout_mask)[0])
