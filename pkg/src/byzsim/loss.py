"""L2-regularized softmax regression.

Parameters are a flat vector of length ``C * (d + 1)``: row ``c`` of the
reshaped ``(C, d + 1)`` matrix holds the class-``c`` weights followed by its
bias. The bias is regularized together with the weights so every per-sample
loss is ``reg``-strongly convex.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionMismatch, EmptyBatch, NoConvergence


@dataclass(frozen=True)
class LossProfile:
    mu: float
    l_smooth: float
    reg: float


def n_params(n_classes, dim):
    return n_classes * (dim + 1)


def augment(features):
    """Append the constant-1 bias feature to each row."""
    features = np.asarray(features, dtype=float)
    ones = np.ones(features.shape[:-1] + (1,))
    return np.concatenate([features, ones], axis=-1)


def _weights(x, dim_aug):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size % dim_aug:
        raise DimensionMismatch(f"parameter vector of size {x.size} does not fit input dim {dim_aug - 1}")
    return x.reshape(-1, dim_aug)


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss(x, sample, reg):
    """Cross-entropy of one ``(features, label)`` sample plus ``reg/2 * ||x||^2``."""
    x = np.asarray(x, dtype=float)
    feats, label = sample
    a = augment(np.atleast_1d(feats))
    w = _weights(x, a.size)
    logp = _log_softmax(w @ a)
    if not 0 <= label < w.shape[0]:
        raise DimensionMismatch(f"label {label} outside [0, {w.shape[0]})")
    return float(-logp[label] + 0.5 * reg * (x @ x))


def grad(x, sample, reg):
    feats, label = sample
    a = augment(np.atleast_1d(feats))
    w = _weights(x, a.size)
    p = np.exp(_log_softmax(w @ a))
    p[label] -= 1.0
    return np.outer(p, a).ravel() + reg * np.asarray(x, dtype=float)


def _check_batch(features, labels):
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] == 0:
        raise EmptyBatch("batch must contain at least one sample")
    if labels.shape != (features.shape[0],):
        raise DimensionMismatch("features and labels disagree on sample count")
    return features, labels


def batch_loss(x, features, labels, reg):
    """Mean per-sample loss over a batch (regularizer counted once)."""
    x = np.asarray(x, dtype=float)
    features, labels = _check_batch(features, labels)
    a = augment(features)
    w = _weights(x, a.shape[1])
    logp = _log_softmax(a @ w.T)
    nll = -logp[np.arange(labels.size), labels]
    return float(nll.mean() + 0.5 * reg * (x @ x))


def batch_grad(x, features, labels, reg):
    features, labels = _check_batch(features, labels)
    a = augment(features)
    w = _weights(x, a.shape[1])
    p = np.exp(_log_softmax(a @ w.T))
    p[np.arange(labels.size), labels] -= 1.0
    return (p.T @ a / labels.size).ravel() + reg * np.asarray(x, dtype=float)


def stacked_grads(xs, feats_aug, labels, reg):
    """One-sample gradients for many models at once.

    ``xs`` is ``(M, C*(d+1))``, ``feats_aug`` is ``(M, d+1)`` (already
    augmented) and ``labels`` is ``(M,)``; row ``i`` of the result is the
    gradient of model ``i`` on sample ``i``.
    """
    m, dim_aug = feats_aug.shape
    w = xs.reshape(m, -1, dim_aug)
    logits = np.einsum("mcd,md->mc", w, feats_aug)
    p = np.exp(_log_softmax(logits))
    p[np.arange(m), labels] -= 1.0
    return (p[:, :, None] * feats_aug[:, None, :]).reshape(m, -1) + reg * xs


def accuracy(x, features, labels):
    a = augment(np.asarray(features, dtype=float))
    w = _weights(x, a.shape[1])
    return float(np.mean(np.argmax(a @ w.T, axis=1) == np.asarray(labels)))


def smoothness_bound(features, reg):
    """Per-sample smoothness bound ``max ||[a;1]||^2 / 2 + reg``.

    The softmax Hessian is ``(diag(p) - p p^T) kron a a^T`` whose first factor
    has spectral norm at most 1/2.
    """
    features = np.asarray(features, dtype=float)
    if features.size == 0:
        raise EmptyBatch("pool is empty")
    sq = np.max(np.sum(features**2, axis=1)) + 1.0
    return LossProfile(mu=reg, l_smooth=0.5 * sq + reg, reg=reg)


def solve_empirical_minimizer(features, labels, reg, tol=1e-9, n_classes=None, max_iter=20_000, x0=None):
    """Minimize the empirical loss until ``||grad|| <= tol``.

    L-BFGS supplies a warm start; full-batch gradient descent with Armijo
    backtracking then runs until the gradient-norm criterion is certified.
    """
    if reg <= 0:
        raise ValueError("reg must be positive for a unique minimizer")
    features, labels = _check_batch(features, labels)
    c = int(n_classes or labels.max() + 1)
    dim = features.shape[1]
    x = np.zeros(n_params(c, dim)) if x0 is None else np.array(x0, dtype=float)

    def fg(v):
        return batch_loss(v, features, labels, reg), batch_grad(v, features, labels, reg)

    res = minimize(fg, x, jac=True, method="L-BFGS-B", options={"maxiter": 5000, "gtol": tol, "ftol": 0.0})
    x = res.x
    f, g = fg(x)
    step = 1.0 / smoothness_bound(features, reg).l_smooth
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= tol:
            return x
        t = 4.0 * step
        while True:
            cand = x - t * g
            fc, gc = fg(cand)
            if fc <= f - 0.5 * t * gn**2 or t <= step:
                break
            t *= 0.5
        x, f, g = cand, fc, gc
    raise NoConvergence(f"gradient norm {np.linalg.norm(g):.3g} > {tol} after {max_iter} iterations")
