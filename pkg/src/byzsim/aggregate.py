"""Aggregation rules and an empirical contraction-constant harness.

All rules take the recipient's own message separately from the messages it
received; weight vectors list the self weight first, then one weight per
neighbor message in the order given.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTrial, TooFewMessages, WeightMismatch
from .graph import metropolis_weights

KINDS = ("mean", "tm", "ios", "scc")


def _stack(self_msg, neighbor_msgs):
    self_msg = np.asarray(self_msg, dtype=float)
    nb = np.asarray(neighbor_msgs, dtype=float).reshape((-1,) + self_msg.shape)
    return self_msg, nb


def _weighted_sum(msgs, weights):
    acc = weights[0] * msgs[0]
    for w, m in zip(weights[1:], msgs[1:]):
        acc = acc + w * m
    return acc


def aggregate_mean(self_msg, neighbor_msgs, weights):
    self_msg, nb = _stack(self_msg, neighbor_msgs)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (nb.shape[0] + 1,):
        raise WeightMismatch(f"{weights.size} weights for {nb.shape[0] + 1} messages")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise WeightMismatch(f"weights sum to {weights.sum()!r}")
    return _weighted_sum([self_msg, *nb], weights)


def aggregate_tm(self_msg, neighbor_msgs, trim_b):
    """Coordinate-wise trimmed mean: drop the ``trim_b`` largest and smallest values."""
    self_msg, nb = _stack(self_msg, neighbor_msgs)
    msgs = np.concatenate([self_msg[None], nb])
    count = msgs.shape[0]
    if count <= 2 * trim_b:
        raise TooFewMessages(f"{count} messages cannot survive trimming {trim_b} from each side")
    ordered = np.sort(msgs, axis=0, kind="stable")
    return ordered[trim_b:count - trim_b].mean(axis=0)


def aggregate_ios(self_msg, neighbor_msgs, weights, trim_b):
    """Iterative outlier scissor.

    ``trim_b`` times, drop the trusted message farthest from the weighted
    average of the trusted set (earliest position on ties); then return the
    renormalized weighted average of what remains.
    """
    self_msg, nb = _stack(self_msg, neighbor_msgs)
    msgs = np.concatenate([self_msg[None], nb])
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (msgs.shape[0],):
        raise WeightMismatch(f"{weights.size} weights for {msgs.shape[0]} messages")
    if msgs.shape[0] <= trim_b:
        raise TooFewMessages(f"{msgs.shape[0]} messages, {trim_b} removals")
    trusted = list(range(msgs.shape[0]))
    for _ in range(trim_b):
        w = weights[trusted] / weights[trusted].sum()
        avg = _weighted_sum(msgs[trusted], w)
        dist = np.linalg.norm(msgs[trusted] - avg, axis=1)
        trusted.pop(int(np.argmax(dist)))
    w = weights[trusted] / weights[trusted].sum()
    return _weighted_sum(msgs[trusted], w)


def clip(v, tau):
    n = np.linalg.norm(v)
    if n == 0.0 or n <= tau:
        return v
    return v * (tau / n)


def adaptive_tau(self_msg, neighbor_msgs, trim_b):
    """The ``(count - trim_b)``-th smallest neighbor distance (0 if none remain)."""
    self_msg, nb = _stack(self_msg, neighbor_msgs)
    keep = nb.shape[0] - trim_b
    if keep <= 0:
        return 0.0
    d = np.sort(np.linalg.norm(nb - self_msg, axis=1))
    return float(d[keep - 1])


def aggregate_scc(self_msg, neighbor_msgs, weights, clip_tau, trim_b=0):
    """Self-centered clipping: ``x + sum_m w_m clip(x_m - x, tau)``.

    ``clip_tau="adaptive"`` uses :func:`adaptive_tau` with ``trim_b``.
    """
    self_msg, nb = _stack(self_msg, neighbor_msgs)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (nb.shape[0] + 1,):
        raise WeightMismatch(f"{weights.size} weights for {nb.shape[0] + 1} messages")
    tau = adaptive_tau(self_msg, nb, trim_b) if clip_tau == "adaptive" else float(clip_tau)
    if math.isinf(tau):
        return aggregate_mean(self_msg, nb, weights)
    out = self_msg
    for w, m in zip(weights[1:], nb):
        out = out + w * clip(m - self_msg, tau)
    return out


@dataclass(frozen=True)
class AggregatorSpec:
    kind: str = "mean"
    trim_b: int = 0
    clip_tau: object = "adaptive"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown aggregator {self.kind!r}; expected one of {KINDS}")
        if self.trim_b < 0:
            raise ValueError("trim_b must be nonnegative")
        if self.clip_tau != "adaptive" and not float(self.clip_tau) >= 0:
            raise ValueError("clip_tau must be 'adaptive' or a nonnegative number")

    def effective_trim(self, count):
        """Trim budget for a node receiving ``count`` messages (self included)."""
        if self.kind == "tm":
            return min(self.trim_b, (count - 1) // 2)
        if self.kind == "ios":
            return min(self.trim_b, count - 1)
        return self.trim_b

    def apply(self, self_msg, neighbor_msgs, weights):
        count = len(neighbor_msgs) + 1
        b = self.effective_trim(count)
        if self.kind == "mean":
            return aggregate_mean(self_msg, neighbor_msgs, weights)
        if self.kind == "tm":
            return aggregate_tm(self_msg, neighbor_msgs, b)
        if self.kind == "ios":
            return aggregate_ios(self_msg, neighbor_msgs, weights, b)
        return aggregate_scc(self_msg, neighbor_msgs, weights, self.clip_tau, b)


@dataclass
class AggregatorCertificate:
    rho_hat: float
    rho_star: float
    w_margin: float
    virtual_w: object
    trials: int
    seed: int
    degenerate: int = 0

    @property
    def passes(self):
        return self.rho_hat < self.rho_star

    def to_dict(self):
        return {
            "kind": "empirical",
            "rho_hat": self.rho_hat,
            "rho_star": self.rho_star,
            "w_margin": self.w_margin,
            "passes": self.passes,
            "trials": self.trials,
            "degenerate_trials": self.degenerate,
            "seed": self.seed,
            "virtual_lambda": self.virtual_w.lam,
            "virtual_chi_sq": self.virtual_w.chi_sq,
        }


BYZANTINE_FAMILIES = ("far_point", "mean_shift", "sign_flip")


def _ball(rng, center, radius, count):
    d = center.size
    u = rng.standard_normal((count, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / d)
    return center + u * r[:, None]


def _byzantine_msgs(family, rng, honest, radius, count):
    mean = honest.mean(axis=0)
    d = honest.shape[1]
    if family == "far_point":
        u = rng.standard_normal(d)
        return np.tile(mean + 100.0 * radius * u / np.linalg.norm(u), (count, 1))
    if family == "mean_shift":
        std = honest.std(axis=0)
        return np.tile(mean + 3.0 * std, (count, 1))
    return np.tile(-mean, (count, 1))


def certify_contraction(agg, t, w_virtual, trials, radius=1.0, seed=0, dim=10, weights=None):
    """Largest observed ``||A_n - x_hat_n|| / max_m ||x_m - x_hat_n||``.

    Honest messages are drawn in a ball of ``radius`` around a random center;
    Byzantine neighbors send one of three heuristic messages (cycled over
    trials). ``x_hat_n`` uses the row of ``w_virtual`` (indexed by
    ``w_virtual.agents``). This is an empirical lower estimate of the true
    worst-case constant, not a proof.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    full = metropolis_weights(t).weights if weights is None else np.asarray(weights)
    honest = t.honest
    pos = {g: i for i, g in enumerate(w_virtual.agents)}
    vw = np.asarray(w_virtual.weights)
    rng = np.random.default_rng(seed)
    rho_hat, degenerate, measured = 0.0, 0, 0
    for trial in range(trials):
        family = BYZANTINE_FAMILIES[trial % len(BYZANTINE_FAMILIES)]
        center = rng.standard_normal(dim)
        x = dict(zip(honest, _ball(rng, center, radius, len(honest))))
        honest_arr = np.stack([x[g] for g in honest])
        byz_cache = {}
        for n in honest:
            nbrs = t.neighbors(n)
            byz_nbrs = [m for m in nbrs if m in t.byzantine]
            if byz_nbrs and family not in byz_cache:
                byz_cache[family] = _byzantine_msgs(family, rng, honest_arr, radius, 1)[0]
            received = [x[m] if m not in t.byzantine else byz_cache[family] for m in nbrs]
            wrow = np.array([full[n, n]] + [full[n, m] for m in nbrs])
            out = agg.apply(x[n], np.array(received) if received else np.zeros((0, dim)), wrow)
            hn = [n] + [m for m in nbrs if m not in t.byzantine]
            vrow = np.array([vw[pos[n], pos[m]] for m in hn])
            x_hat = aggregate_mean(x[n], np.array([x[m] for m in hn[1:]]).reshape(-1, dim), vrow)
            spread = max(np.linalg.norm(x[m] - x_hat) for m in hn)
            if spread == 0.0:
                degenerate += 1
                continue
            measured += 1
            rho_hat = max(rho_hat, float(np.linalg.norm(out - x_hat) / spread))
    if measured == 0:
        raise DegenerateTrial("every trial had coinciding honest messages")
    n_honest = len(honest)
    rho_star = w_virtual.lam / (8.0 * math.sqrt(n_honest))
    return AggregatorCertificate(
        rho_hat=rho_hat,
        rho_star=rho_star,
        w_margin=w_virtual.lam - 8.0 * rho_hat * math.sqrt(n_honest),
        virtual_w=w_virtual,
        trials=trials,
        seed=seed,
        degenerate=degenerate,
    )
