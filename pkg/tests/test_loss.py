import math

import numpy as np
import pytest

from byzsim import loss as L
from byzsim.errors import DimensionMismatch, EmptyBatch


def _naive_loss(x, feats, label, reg):
    """Unfused scalar evaluation of the same objective."""
    c = len(x) // (len(feats) + 1)
    d1 = len(feats) + 1
    logits = []
    for k in range(c):
        s = x[k * d1 + d1 - 1]
        for j, f in enumerate(feats):
            s += x[k * d1 + j] * f
        logits.append(s)
    m = max(logits)
    lse = m + math.log(sum(math.exp(v - m) for v in logits))
    return lse - logits[label] + 0.5 * reg * sum(v * v for v in x)


def _fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_zero_params_give_log_c():
    for c in (2, 3, 10):
        x = np.zeros(c * 5)
        assert L.loss(x, (np.arange(4.0), 1), reg=0.7) == pytest.approx(math.log(c), abs=1e-15)


def test_confident_correct_logits_drive_loss_to_zero():
    x = np.zeros(2 * 2)
    x[0] = 1000.0  # class 0 weight on the single feature
    assert L.loss(x, (np.array([1.0]), 0), reg=0.0) < 1e-12


def test_loss_matches_naive_oracle(rng):
    for _ in range(20):
        c, d = rng.integers(2, 6), rng.integers(1, 8)
        x = rng.standard_normal(c * (d + 1))
        f = rng.standard_normal(d)
        y = int(rng.integers(c))
        assert L.loss(x, (f, y), 0.01) == pytest.approx(_naive_loss(x, f, y, 0.01), abs=1e-12)


def test_grad_binary_zero_features():
    g = L.grad(np.zeros(2 * 3), (np.zeros(2), 0), reg=0.3)
    w = g.reshape(2, 3)
    assert np.all(w[:, :2] == 0)
    assert w[:, 2].tolist() == [-0.5, 0.5]


def test_grad_matches_finite_differences(rng):
    for _ in range(20):
        c, d = 3, 4
        x = rng.standard_normal(c * (d + 1))
        s = (rng.standard_normal(d), int(rng.integers(c)))
        g = L.grad(x, s, 0.01)
        fd = _fd_grad(lambda v: L.loss(v, s, 0.01), x)
        assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-6


def test_grad_on_duplicate_sample_is_identical(rng):
    x = rng.standard_normal(12)
    s = (rng.standard_normal(3), 2)
    dup = (s[0].copy(), s[1])
    assert np.array_equal(L.grad(x, s, 0.0), L.grad(x, dup, 0.0))


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        L.loss(np.zeros(7), (np.zeros(3), 0), 0.1)
    with pytest.raises(DimensionMismatch):
        L.loss(np.zeros(8), (np.zeros(3), 5), 0.1)


def test_batch_reductions(rng):
    x = rng.standard_normal(3 * 5)
    f = rng.standard_normal((1, 4))
    y = np.array([2])
    assert L.batch_loss(x, f, y, 0.1) == pytest.approx(L.loss(x, (f[0], 2), 0.1), abs=1e-14)
    assert np.allclose(L.batch_grad(x, f, y, 0.1), L.grad(x, (f[0], 2), 0.1), atol=1e-14)
    f2, y2 = np.vstack([f, f]), np.array([2, 2])
    assert L.batch_loss(x, f2, y2, 0.1) == pytest.approx(L.batch_loss(x, f, y, 0.1), abs=1e-14)
    assert np.allclose(L.batch_grad(x, f2, y2, 0.1), L.batch_grad(x, f, y, 0.1), atol=1e-14)


def test_global_mean_equals_mean_of_agent_means(rng):
    x = rng.standard_normal(3 * 5)
    feats = rng.standard_normal((4, 25, 4))
    labels = rng.integers(0, 3, size=(4, 25))
    per_agent = np.mean([L.batch_loss(x, feats[n], labels[n], 0.01) for n in range(4)])
    glob = L.batch_loss(x, feats.reshape(-1, 4), labels.ravel(), 0.01)
    assert glob == pytest.approx(per_agent, abs=1e-12)


def test_batch_is_deterministic(rng):
    x = rng.standard_normal(3 * 5)
    f, y = rng.standard_normal((50, 4)), rng.integers(0, 3, 50)
    assert L.batch_loss(x, f, y, 0.01) == L.batch_loss(x, f, y, 0.01)


def test_empty_batch():
    with pytest.raises(EmptyBatch):
        L.batch_loss(np.zeros(6), np.zeros((0, 2)), np.zeros(0, dtype=int), 0.1)


def test_stacked_grads_match_single(rng):
    xs = rng.standard_normal((4, 3 * 6))
    f = rng.standard_normal((4, 5))
    y = rng.integers(0, 3, 4)
    out = L.stacked_grads(xs, L.augment(f), y, 0.05)
    for i in range(4):
        assert np.allclose(out[i], L.grad(xs[i], (f[i], int(y[i])), 0.05), atol=1e-13)


def test_smoothness_bound_formula():
    prof = L.smoothness_bound(np.zeros((5, 3)), 0.1)
    assert prof.l_smooth == pytest.approx(0.6, abs=1e-15)
    assert prof.mu == 0.1
    prof = L.smoothness_bound(np.ones((2, 784)), 0.01)
    assert prof.l_smooth <= 0.5 * 785 + 0.01


def test_smoothness_bound_holds_on_random_probes(rng):
    feats = rng.standard_normal((200, 4))
    prof = L.smoothness_bound(feats, 0.01)
    for _ in range(1000):
        x, y = rng.standard_normal(15) * 3, rng.standard_normal(15) * 3
        i = int(rng.integers(200))
        s = (feats[i], int(rng.integers(3)))
        lhs = np.linalg.norm(L.grad(x, s, 0.01) - L.grad(y, s, 0.01))
        assert lhs <= prof.l_smooth * np.linalg.norm(x - y) * (1 + 1e-12)


def test_strong_convexity_probe(rng):
    reg = 0.05
    for _ in range(200):
        x, y = rng.standard_normal(12), rng.standard_normal(12)
        s = (rng.standard_normal(3), int(rng.integers(3)))
        a = rng.random()
        lhs = L.loss(a * x + (1 - a) * y, s, reg)
        rhs = a * L.loss(x, s, reg) + (1 - a) * L.loss(y, s, reg) - reg * a * (1 - a) / 2 * np.sum((x - y) ** 2)
        assert lhs <= rhs + 1e-12


def test_minimizer_on_uninformative_labels(rng):
    f = rng.standard_normal((300, 3))
    y = np.arange(300) % 3
    rng.shuffle(f)
    x = L.solve_empirical_minimizer(f, y, reg=0.5, tol=1e-9, n_classes=3)
    assert np.linalg.norm(L.batch_grad(x, f, y, 0.5)) <= 1e-9
    probs = np.exp(L._log_softmax(L.augment(f) @ x.reshape(3, 4).T))
    assert np.all(np.abs(probs - 1 / 3) < 0.1)


def test_minimizer_beats_random_probes(rng):
    f = rng.standard_normal((100, 4))
    y = rng.integers(0, 3, 100)
    x = L.solve_empirical_minimizer(f, y, reg=0.1, tol=1e-10, n_classes=3)
    best = L.batch_loss(x, f, y, 0.1)
    for _ in range(100):
        probe = x + rng.standard_normal(x.size) * rng.choice([1e-3, 0.1, 1.0])
        assert best <= L.batch_loss(probe, f, y, 0.1)


def test_minimizer_stable_under_larger_cap(rng):
    f = rng.standard_normal((100, 4))
    y = rng.integers(0, 3, 100)
    tol, reg = 1e-8, 0.1
    a = L.solve_empirical_minimizer(f, y, reg, tol=tol, n_classes=3, max_iter=20_000)
    b = L.solve_empirical_minimizer(f, y, reg, tol=tol, n_classes=3, max_iter=40_000)
    diff = abs(L.batch_loss(a, f, y, reg) - L.batch_loss(b, f, y, reg))
    assert diff <= tol * np.linalg.norm(a) + tol**2 / (2 * reg)


def test_minimizer_requires_positive_reg():
    with pytest.raises(ValueError):
        L.solve_empirical_minimizer(np.zeros((3, 2)), np.array([0, 1, 0]), reg=0.0)
