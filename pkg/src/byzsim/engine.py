"""Synchronous simulation of attack-free and Byzantine-resilient decentralized SGD.

Randomness is addressed by role: every agent draws its sample indices from
``substream(master, "sample", agent)`` and every honest recipient's Gaussian
attack noise from ``substream(master, "attack", agent)``. Coupled runs that
share a master seed therefore see identical draws, and the thread count
only changes who computes each recipient's aggregate, never its inputs.
"""
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import graph
from .aggregate import AggregatorSpec, certify_contraction
from .attack import AttackSpec, attack_messages
from .config import RunConfig
from .data import (
    PartitionedDataset,
    class_mix,
    draw_perturbation,
    dirichlet_partition,
    heterogeneity_stats,
    load_idx,
    perturb,
    synth_gaussian_classes,
)
from .errors import ConfigInvalid
from .loss import _log_softmax, augment, smoothness_bound, solve_empirical_minimizer, stacked_grads
from .rng import derive_seed, substream

CSV_COLUMNS = ("step", "alpha", "H_k", "train_loss", "opt_error", "test_loss", "gap")


@dataclass(frozen=True)
class StepSchedule:
    kind: str
    mu: float = 1.0
    offset: float = 1.0
    a: float = 1.0
    b: float = 0.01

    def alpha(self, k):
        if self.kind == "theory_k0":
            return 1.0 / (self.mu * (k + self.offset))
        if self.kind == "theory_k1":
            return 2.0 / (self.mu * (k + self.offset))
        return self.a / (self.b * k + 1.0)

    def alphas(self, steps):
        return np.array([self.alpha(k) for k in range(steps)])


def auto_offset(kind, mu, l_smooth):
    """Smallest integer offset with ``alpha^0 <= 1/(2L)``."""
    scale = 1.0 if kind == "theory_k0" else 2.0
    k = max(1, math.ceil(2.0 * scale * l_smooth / mu))
    while scale / (mu * k) > 1.0 / (2.0 * l_smooth):
        k += 1
    return k


def make_schedule(cfg, profile):
    s = cfg.schedule
    if s.kind == "experiment":
        return StepSchedule("experiment", mu=profile.mu, a=s.a, b=s.b)
    offset = s.offset if s.offset is not None else auto_offset(s.kind, profile.mu, profile.l_smooth)
    sched = StepSchedule(s.kind, mu=profile.mu, offset=float(offset))
    if sched.alpha(0) > 1.0 / (2.0 * profile.l_smooth) * (1 + 1e-12):
        raise ConfigInvalid(
            f"initial step {sched.alpha(0):.4g} exceeds 1/(2L) = {1 / (2 * profile.l_smooth):.4g}",
            "schedule.offset",
        )
    return sched


def _data_dir():
    return Path(os.environ.get("BYZSIM_DATA_DIR", "."))


def _resolve(path, default_names):
    if path:
        p = Path(path)
        return p if p.is_absolute() else _data_dir() / p
    for name in default_names:
        cand = _data_dir() / name
        if cand.exists():
            return cand
    return _data_dir() / default_names[0]


def load_pool(cfg):
    """Return ``(pool, test_set, n_classes)`` for the configured data source."""
    d = cfg.data
    seed = d.seed if d.seed is not None else derive_seed(cfg.run.master_seed, "data")
    if d.source == "synthetic":
        size = d.pool_size or int(round(d.pool_factor * cfg.topology.n_agents * d.z_per_agent))
        pool, test = synth_gaussian_classes(d.n_classes, d.dim, d.sep, size, d.test_size, seed, d.offset, d.noise)
        return pool, test, d.n_classes
    pool = load_idx(
        _resolve(d.images, ["train-images-idx3-ubyte", "train-images-idx3-ubyte.gz"]),
        _resolve(d.labels, ["train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz"]),
    )
    test = load_idx(
        _resolve(d.test_images, ["t10k-images-idx3-ubyte", "t10k-images-idx3-ubyte.gz"]),
        _resolve(d.test_labels, ["t10k-labels-idx1-ubyte", "t10k-labels-idx1-ubyte.gz"]),
    )
    c = int(max(pool.labels.max(), test.labels.max()) + 1)
    return pool, test, c


def build_topology(cfg):
    t = cfg.topology
    master = cfg.run.master_seed
    seed = t.seed if t.seed is not None else derive_seed(master, "topology")
    if t.kind == "erdos_renyi":
        topo = graph.generate_erdos_renyi(t.n_agents, t.p, seed)
    elif t.kind == "complete":
        topo = graph.complete_graph(t.n_agents)
    elif t.kind == "path":
        topo = graph.path_graph(t.n_agents)
    else:
        topo = graph.ring_graph(t.n_agents)
    return graph.place_byzantine(topo, t.n_byzantine, derive_seed(master, "byzantine", seed))


@dataclass
class Setup:
    """Everything a run needs, resolved from a :class:`RunConfig`."""

    cfg: RunConfig
    topology: graph.Topology
    full_w: graph.MixingMatrix
    virtual_w: graph.MixingMatrix
    agents: list
    dataset: PartitionedDataset
    profile: object
    schedule: StepSchedule
    aggregator: AggregatorSpec
    attack: AttackSpec
    single: bool = False

    @property
    def master(self):
        return self.cfg.run.master_seed

    @property
    def byzantine_active(self):
        return bool(self.topology.byzantine) and self.attack.kind != "none"

    @cached_property
    def local_data(self):
        return self.dataset.restrict(self.agents)

    @cached_property
    def minimizer(self):
        union = self.local_data.union()
        return solve_empirical_minimizer(
            union.features, union.labels, self.cfg.loss.reg, tol=self.cfg.run.solver_tol,
            n_classes=self.dataset.n_classes,
        )

    @cached_property
    def draws(self):
        steps, z = self.cfg.run.steps, self.dataset.z
        return np.stack([substream(self.master, "sample", g).integers(0, z, size=steps) for g in self.agents])

    @property
    def n_params(self):
        return self.dataset.n_classes * (self.dataset.features.shape[2] + 1)

    def single_agent(self, agent):
        """The same data and schedule restricted to one agent training alone."""
        if agent not in self.agents:
            raise ConfigInvalid(f"agent {agent} is not an honest agent", "agent")
        w = graph.MixingMatrix(np.ones((1, 1)), 1.0, 0.0, (agent,))
        return Setup(
            self.cfg, graph.Topology(1, frozenset()), w, w, [agent], self.dataset, self.profile,
            self.schedule, AggregatorSpec("mean"), AttackSpec("none"), single=True,
        )


def prepare(cfg):
    cfg.validate()
    topo = build_topology(cfg)
    full_w = graph.metropolis_weights(topo)
    virtual_w = graph.induced_nonbyzantine_matrix(topo, full_w) if topo.byzantine else full_w
    pool, test, c = load_pool(cfg)
    data_seed = cfg.data.seed if cfg.data.seed is not None else derive_seed(cfg.run.master_seed, "data")
    ds = dirichlet_partition(
        pool, topo.n_total, cfg.data.z_per_agent, cfg.data.beta, derive_seed(data_seed, "partition"),
        test_set=test, n_classes=c,
    )
    honest = topo.honest
    profile = smoothness_bound(ds.restrict(honest).union().features, cfg.loss.reg)
    schedule = make_schedule(cfg, profile)
    trim = cfg.aggregator.trim_b if cfg.aggregator.trim_b is not None else cfg.topology.n_byzantine
    clip_tau = cfg.aggregator.clip_tau if cfg.aggregator.clip_tau == "adaptive" else float(cfg.aggregator.clip_tau)
    agg = AggregatorSpec(cfg.aggregator.kind, trim, clip_tau)
    target = cfg.attack.dup_target
    if target is None:
        target = int(substream(cfg.run.master_seed, "dup_target").choice(honest))
    elif target not in honest:
        raise ConfigInvalid(f"agent {target} is not honest", "attack.dup_target")
    attack = AttackSpec(cfg.attack.kind, cfg.attack.alie_scale, target)
    return Setup(cfg, topo, full_w, virtual_w, honest, ds, profile, schedule, agg, attack)


@dataclass
class MetricsTrace:
    step: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    H_k: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    opt_error: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list)

    def append(self, **row):
        for col in CSV_COLUMNS:
            getattr(self, col).append(row.pop(col, math.nan))
        for key, value in row.items():
            self.extra.setdefault(key, []).append(value)

    def final(self, column):
        values = getattr(self, column) if column in CSV_COLUMNS else self.extra[column]
        return values[-1]

    def to_csv(self):
        lines = [",".join(CSV_COLUMNS)]
        for i in range(len(self.step)):
            cells = [str(self.step[i])]
            for col in CSV_COLUMNS[1:]:
                cells.append(_fmt(getattr(self, col)[i]))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def as_array(self, column):
        return np.asarray(getattr(self, column) if column in CSV_COLUMNS else self.extra[column], dtype=float)


def _fmt(v):
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


class TestPopulation:
    """Population loss under a class mixture, estimated on a labelled test set.

    Per-class mean test losses are combined with ``class_weights``, so the
    test set only has to cover the classes, not match their proportions.
    """

    def __init__(self, test, class_weights):
        labels = np.asarray(test.labels, dtype=np.int64)
        w = np.asarray(class_weights, dtype=float)
        counts = np.bincount(labels, minlength=w.size)[: w.size]
        missing = (w > 0) & (counts == 0)
        if missing.any():
            raise ValueError(f"test set has no samples of classes {np.flatnonzero(missing).tolist()}")
        w = w / w.sum()
        self.feats = augment(test.features)
        self.labels = labels
        self.sample_w = np.where(counts[labels] > 0, w[labels] / np.maximum(counts[labels], 1), 0.0)

    def loss(self, x, reg):
        w = x.reshape(-1, self.feats.shape[1])
        logp = _log_softmax(self.feats @ w.T)
        nll = -logp[np.arange(self.labels.size), self.labels]
        return float(nll @ self.sample_w + 0.5 * reg * (x @ x))


def population(setup, agents=None):
    """Test population: the equal-weight mixture of the given agents' distributions.

    The default covers every agent in the network, Byzantine ones included,
    which is the global distribution a shared test set represents. With no
    Byzantine agents this is the honest population.
    """
    ds = setup.dataset
    return TestPopulation(ds.test_set, class_mix(ds, agents))


def _mean_loss(x, feats_aug, labels, reg):
    w = x.reshape(-1, feats_aug.shape[1])
    logp = _log_softmax(feats_aug @ w.T)
    return float(-logp[np.arange(labels.size), labels].mean() + 0.5 * reg * (x @ x))


class _Simulator:
    """Runs one trajectory of the configured algorithm on a given dataset."""

    def __init__(self, setup, data=None, threads=None):
        self.setup = setup
        cfg = setup.cfg
        self.data = data if data is not None else setup.local_data
        self.feats = augment(self.data.features)
        self.labels = self.data.labels
        self.n = len(setup.agents)
        self.reg = cfg.loss.reg
        self.steps = cfg.run.steps
        self.alphas = setup.schedule.alphas(self.steps)
        self.threads = threads or cfg.run.threads
        self.pos = {g: i for i, g in enumerate(setup.agents)}
        self._plan_mixing()

    def _plan_mixing(self):
        s = self.setup
        if not s.byzantine_active and s.aggregator.kind == "mean":
            self.fast_w = np.ascontiguousarray(s.virtual_w.weights)
            return
        self.fast_w = None
        topo = s.topology
        vpos = {g: i for i, g in enumerate(s.virtual_w.agents)}
        self.recipients = []
        for g in s.agents:
            nbrs = topo.neighbors(g)
            if s.byzantine_active:
                received = nbrs
                weights = [s.full_w.weights[g, g]] + [s.full_w.weights[g, m] for m in nbrs]
            else:
                received = [m for m in nbrs if m not in topo.byzantine]
                vw = s.virtual_w.weights
                weights = [vw[vpos[g], vpos[g]]] + [vw[vpos[g], vpos[m]] for m in received]
            honest_nbrs = [m for m in received if m not in topo.byzantine]
            byz_nbrs = [m for m in received if m in topo.byzantine]
            self.recipients.append((g, received, np.array(weights), honest_nbrs, len(byz_nbrs)))

    def _attack_rngs(self):
        return [substream(self.setup.master, "attack", g) for g in self.setup.agents]

    def _receive(self, i, xh, rngs):
        s = self.setup
        g, received, weights, honest_nbrs, n_byz = self.recipients[i]
        own = xh[i]
        msgs = {m: xh[self.pos[m]] for m in honest_nbrs}
        if n_byz:
            target = xh[self.pos[s.attack.dup_target]] if s.attack.kind == "sample_dup" else None
            fake = iter(attack_messages(s.attack, g, msgs, n_byz, rngs[i], target_msg=target, dim=own.size))
            ordered = [msgs[m] if m in msgs else next(fake) for m in received]
        else:
            ordered = [msgs[m] for m in received]
        stacked = np.array(ordered) if ordered else np.zeros((0, own.size))
        return s.aggregator.apply(own, stacked, weights)

    def run(self, on_eval, eval_steps):
        s = self.setup
        draws = s.draws
        x = np.full((self.n, s.n_params), float(s.cfg.run.init_value))
        rows = np.arange(self.n)
        rngs = self._attack_rngs() if self.fast_w is None else None
        pool = ThreadPoolExecutor(self.threads) if self.fast_w is None and self.threads > 1 else None
        try:
            for k in range(self.steps + 1):
                if k in eval_steps:
                    on_eval(k, x)
                if k == self.steps:
                    break
                idx = draws[:, k]
                grads = stacked_grads(x, self.feats[rows, idx], self.labels[rows, idx], self.reg)
                xh = x - self.alphas[k] * grads
                if self.fast_w is not None:
                    x = self.fast_w @ xh
                elif pool is not None:
                    x = np.stack(list(pool.map(lambda i: self._receive(i, xh, rngs), range(self.n))))
                else:
                    x = np.stack([self._receive(i, xh, rngs) for i in range(self.n)])
        finally:
            if pool is not None:
                pool.shutdown()
        return x


def eval_schedule(steps, every):
    pts = set(range(0, steps + 1, every))
    pts.add(steps)
    return pts


def _run(setup, threads=None, extra_eval=None, test_population=None):
    cfg = setup.cfg
    metrics = set(cfg.run.metrics)
    sim = _Simulator(setup, threads=threads)
    union = setup.local_data.union()
    train_aug = augment(union.features)
    pop = test_population
    if pop is None and len(setup.dataset.test_set):
        pop = population(setup)
    f_star = None
    if "opt_error" in metrics:
        f_star = _mean_loss(setup.minimizer, train_aug, union.labels, sim.reg)
    trace = MetricsTrace()
    steps = cfg.run.steps

    def on_eval(k, x):
        xbar = x.mean(axis=0)
        row = {"step": k, "alpha": sim.alphas[k] if k < steps else setup.schedule.alpha(k)}
        if "consensus" in metrics:
            row["H_k"] = float(np.mean(np.sum((x - xbar) ** 2, axis=1)))
        need_train = metrics & {"train_loss", "opt_error", "gap"}
        if need_train:
            train = _mean_loss(xbar, train_aug, union.labels, sim.reg)
            if "train_loss" in metrics or "gap" in metrics:
                row["train_loss"] = train
            if f_star is not None:
                row["opt_error"] = train - f_star
        if pop is not None and metrics & {"test_loss", "gap"}:
            row["test_loss"] = pop.loss(xbar, sim.reg)
            if "gap" in metrics:
                row["gap"] = row["test_loss"] - row["train_loss"]
        if "accuracy" in metrics:
            row["accuracy"] = [
                float(np.mean(np.argmax(sim.feats[i] @ x[i].reshape(-1, sim.feats.shape[2]).T, axis=1) == sim.labels[i]))
                for i in range(sim.n)
            ]
        if extra_eval is not None:
            row.update(extra_eval(xbar))
        trace.append(**row)
        trace.checkpoints.append(xbar)

    sim.run(on_eval, eval_schedule(steps, cfg.run.eval_every))
    return trace


def run_attack_free(cfg, setup=None, threads=None):
    """Decentralized SGD with weighted averaging and no Byzantine agents."""
    if setup is None:
        if cfg.attack.kind != "none" or cfg.topology.n_byzantine:
            raise ConfigInvalid("attack-free runs need attack 'none' and no Byzantine agents", "attack.kind")
        if cfg.aggregator.kind != "mean":
            raise ConfigInvalid("attack-free runs aggregate with 'mean'", "aggregator.kind")
        setup = prepare(cfg)
    if setup.full_w.chi_sq > 1e-12 and not setup.single:
        raise ConfigInvalid("mixing matrix is not doubly stochastic", "topology")
    return _run(setup, threads)


def run_byzantine(cfg, setup=None, threads=None):
    """Decentralized SGD where honest agents aggregate with the configured rule."""
    setup = setup or prepare(cfg)
    return _run(setup, threads)


def run_config(cfg, setup=None, threads=None):
    """Dispatch to the attack-free or Byzantine-resilient runner."""
    if cfg.topology.n_byzantine == 0 and cfg.attack.kind == "none" and cfg.aggregator.kind == "mean":
        return run_attack_free(cfg, setup, threads)
    return run_byzantine(cfg, setup, threads)


@dataclass
class StabilityEstimate:
    steps: list
    mean_sq_dist: np.ndarray
    per_pair: np.ndarray
    pairs: list

    @property
    def n_pairs(self):
        return len(self.pairs)

    def final(self):
        return float(self.mean_sq_dist[-1])

    def to_csv(self):
        lines = ["step,stability"]
        lines += [f"{k},{_fmt(v)}" for k, v in zip(self.steps, self.mean_sq_dist)]
        return "\n".join(lines) + "\n"


def average_trajectory(setup, data=None, eval_steps=None, threads=None):
    """Honest-average model at each step in ``eval_steps`` (default: every step)."""
    if eval_steps is None:
        eval_steps = set(range(setup.cfg.run.steps + 1))
    out = []
    _Simulator(setup, data=data, threads=threads).run(lambda k, x: out.append(x.mean(axis=0)), eval_steps)
    return np.stack(out)


def run_coupled_stability(cfg, p_sample=32, setup=None, pairs=None, threads=None):
    """Monte-Carlo on-average stability from coupled trajectories.

    The base run and each perturbed run share every random stream; only the
    replaced sample differs. Returns the mean over ``p_sample`` pairs of
    ``||xbar^k - xbar'^k||^2`` at each evaluation step.
    """
    if p_sample < 1:
        raise ValueError("p_sample must be >= 1")
    setup = setup or prepare(cfg)
    eval_steps = eval_schedule(cfg.run.steps, cfg.run.eval_every)
    base_data = setup.local_data
    base = average_trajectory(setup, base_data, eval_steps, threads)
    if pairs is None:
        rng = substream(setup.master, "perturb")
        pairs = [draw_perturbation(base_data, rng) for _ in range(p_sample)]
    per_pair = np.stack([
        np.sum((average_trajectory(setup, perturb(base_data, idx), eval_steps, threads) - base) ** 2, axis=1)
        for idx in pairs
    ])
    return StabilityEstimate(sorted(eval_steps), per_pair.mean(axis=0), per_pair, list(pairs))


def choose_isolated_agent(setup):
    return int(substream(setup.master, "no_cooperation").choice(setup.agents))


def run_no_cooperation(cfg, agent=None, setup=None):
    """Single-agent SGD on one honest agent's data.

    ``gap`` uses the global population of :func:`population`; the extra columns
    ``local_test_loss`` / ``local_gap`` use the agent's own distribution.
    """
    setup = setup or prepare(cfg)
    agent = choose_isolated_agent(setup) if agent is None else agent
    solo = setup.single_agent(agent)
    local = population(setup, [agent])
    solo_data = solo.local_data.union()
    train_aug = augment(solo_data.features)
    reg = cfg.loss.reg

    def extra(xbar):
        lt = local.loss(xbar, reg)
        return {"local_test_loss": lt, "local_gap": lt - _mean_loss(xbar, train_aug, solo_data.labels, reg)}

    trace = _run(solo, extra_eval=extra, test_population=population(setup))
    trace.extra["agent"] = agent
    return trace


def estimate_discrepancy_proxy(setup, checkpoints, agent):
    """``max_x |F_n(x) - F(x)|`` over the checkpoints, both estimated on test data."""
    if not len(checkpoints):
        raise ValueError("need at least one checkpoint")
    local, glob = population(setup, [agent]), population(setup)
    reg = setup.cfg.loss.reg
    return max(abs(local.loss(np.asarray(x, dtype=float), reg) - glob.loss(np.asarray(x, dtype=float), reg)) for x in checkpoints)


def probe_points(trace, count):
    cps = trace.checkpoints
    if len(cps) <= count:
        return list(cps)
    idx = np.linspace(0, len(cps) - 1, count).round().astype(int)
    return [cps[i] for i in sorted(set(idx.tolist()))]


def run_summary(setup, trace, wall_time, certificate=None):
    cfg = setup.cfg
    sigma, delta = heterogeneity_stats(setup.local_data, probe_points(trace, cfg.run.probe_points), cfg.loss.reg)
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "topology": setup.topology.to_dict(),
        "mixing": setup.full_w.to_dict(),
        "lambda": setup.virtual_w.lam,
        "chi_sq": setup.virtual_w.chi_sq,
        "l_smooth": setup.profile.l_smooth,
        "mu": setup.profile.mu,
        "schedule": {"kind": setup.schedule.kind, "offset": setup.schedule.offset, "alpha0": setup.schedule.alpha(0)},
        "aggregator": {"kind": setup.aggregator.kind, "trim_b": setup.aggregator.trim_b, "clip_tau": setup.aggregator.clip_tau},
        "attack": {"kind": setup.attack.kind, "alie_scale": setup.attack.alie_scale, "dup_target": setup.attack.dup_target},
        "rho_certificate": certificate.to_dict() if certificate is not None else None,
        "sigma_sq_hat": sigma,
        "delta_sq_hat": delta,
        "heterogeneity_note": "maxima over probe checkpoints, not suprema",
        "final": {c: trace.final(c) for c in CSV_COLUMNS[1:]},
        "wall_time_s": wall_time,
    }


def certify(setup, trials=200, radius=1.0, seed=None, dim=10):
    seed = derive_seed(setup.master, "certify") if seed is None else seed
    return certify_contraction(
        setup.aggregator, setup.topology, setup.virtual_w, trials, radius=radius, seed=seed, dim=dim,
        weights=setup.full_w.weights,
    )


def timed(fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t0
