"""Datasets, Dirichlet partitioning and single-sample perturbation."""
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from . import loss as _loss
from .errors import BadMagic, CountMismatch, IndexOutOfRange, InsufficientPool, Truncated

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class SampleArray:
    """A batch of samples stored as ``features (n, d)`` and ``labels (n,)``."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64)
        if f.ndim != 2 or y.shape != (f.shape[0],):
            raise ValueError("features must be (n, d) and labels (n,)")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.size

    def __getitem__(self, i):
        return self.features[i], int(self.labels[i])

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleArray(self.features[idx], self.labels[idx])

    @property
    def dim(self):
        return self.features.shape[1]

    def class_hist(self, n_classes):
        return np.bincount(self.labels, minlength=n_classes)

    def __eq__(self, other):
        return (
            isinstance(other, SampleArray)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def synth_gaussian_classes(c, d, sep, n_train, n_test, seed, offset=0.0, noise=1.0):
    """Balanced Gaussian classes with isotropic noise of std ``noise``.

    Class ``k`` has mean ``offset * 1/sqrt(d) + sep * u_k`` for a random unit
    ``u_k``. A nonzero ``offset`` gives every class a shared component, as
    nonnegative image features have.
    """
    if c < 2:
        raise ValueError("need at least two classes")
    if sep < 0 or noise < 0:
        raise ValueError("sep and noise must be nonnegative")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((c, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = sep * dirs + offset / np.sqrt(d)

    def draw(n):
        labels = np.arange(n) % c
        rng.shuffle(labels)
        feats = means[labels] + noise * rng.standard_normal((n, d))
        return SampleArray(feats, labels)

    return draw(n_train), draw(n_test)


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise Truncated(f"{path}: header shorter than 8 bytes")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagic(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise Truncated(f"{path}: header truncated")
    dims = struct.unpack(">" + "I" * ndim, raw[4:hdr])
    need = int(np.prod(dims))
    body = raw[hdr:]
    if len(body) < need:
        raise Truncated(f"{path}: expected {need} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=need).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return SampleArray(feats, labels.astype(np.int64))


def save_idx(images, labels, images_path, labels_path):
    """Write uint8 ``images (n, rows, cols)`` and ``labels (n,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


@dataclass(frozen=True, eq=False)
class PartitionedDataset:
    """Equal-size local datasets for ``n_agents`` agents.

    ``features`` is ``(N, Z, d)``, ``labels`` is ``(N, Z)``. ``surplus[n]``
    holds the part of agent ``n``'s Dirichlet allocation that did not fit in
    its ``Z`` slots; it is the source of replacement samples for perturbation.
    """

    features: np.ndarray
    labels: np.ndarray
    surplus: tuple
    allocation: tuple
    test_set: SampleArray
    beta: float
    seed: int
    n_classes: int

    @property
    def n_agents(self):
        return self.labels.shape[0]

    @property
    def z(self):
        return self.labels.shape[1]

    def agent(self, n):
        return SampleArray(self.features[n], self.labels[n])

    def union(self, agents=None):
        agents = range(self.n_agents) if agents is None else list(agents)
        f = np.concatenate([self.features[n] for n in agents])
        y = np.concatenate([self.labels[n] for n in agents])
        return SampleArray(f, y)

    def class_hist(self, n):
        return np.bincount(self.labels[n], minlength=self.n_classes)

    def restrict(self, agents):
        agents = list(agents)
        return PartitionedDataset(
            self.features[agents], self.labels[agents],
            tuple(self.surplus[n] for n in agents), tuple(self.allocation[n] for n in agents),
            self.test_set, self.beta, self.seed, self.n_classes,
        )

    def __eq__(self, other):
        return (
            isinstance(other, PartitionedDataset)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.test_set == other.test_set
        )

    def report(self):
        return {
            "beta": self.beta,
            "seed": self.seed,
            "n_agents": self.n_agents,
            "z_per_agent": self.z,
            "class_hist": [self.class_hist(n).tolist() for n in range(self.n_agents)],
        }


def dirichlet_partition(pool, n_agents, z_per_agent, beta, seed, test_set=None, n_classes=None):
    """Split ``pool`` across agents with per-class proportions ``Dir(beta * 1_N)``.

    Each class's samples are shuffled and cut at the cumulative Dirichlet
    proportions. Every agent then keeps exactly ``z_per_agent`` samples:
    oversized allocations are truncated (the rest becomes surplus) and
    undersized ones are filled by resampling their own allocation. An agent
    that receives nothing draws its slots from the other agents' surplus.
    """
    n_total = len(pool)
    if n_total < n_agents * z_per_agent:
        raise InsufficientPool(f"pool of {n_total} cannot fill {n_agents} x {z_per_agent}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    c = int(n_classes or pool.labels.max() + 1)
    rng = np.random.default_rng(seed)
    alloc = [[] for _ in range(n_agents)]
    # proportions first, so the class layout does not depend on the pool size
    props = rng.dirichlet(np.full(n_agents, float(beta)), size=c)
    for k in range(c):
        idx = np.flatnonzero(pool.labels == k)
        rng.shuffle(idx)
        p = props[k]
        cuts = np.floor(np.cumsum(p)[:-1] * idx.size).astype(np.int64)
        for n, part in enumerate(np.split(idx, np.clip(cuts, 0, idx.size))):
            alloc[n].extend(part.tolist())

    keep, surplus = [None] * n_agents, [None] * n_agents
    allocation = [np.asarray(a, dtype=np.int64) for a in alloc]
    empty = []
    for n in range(n_agents):
        a = rng.permutation(allocation[n])
        if a.size >= z_per_agent:
            keep[n], surplus[n] = a[:z_per_agent], a[z_per_agent:]
        elif a.size > 0:
            fill = rng.choice(a, size=z_per_agent - a.size, replace=True)
            keep[n], surplus[n] = np.concatenate([a, fill]), a[:0]
        else:
            empty.append(n)
    for n in empty:
        owners = np.concatenate([np.full(surplus[m].size, m) for m in range(n_agents) if surplus[m] is not None])
        slots = np.concatenate([np.arange(surplus[m].size) for m in range(n_agents) if surplus[m] is not None])
        if owners.size < z_per_agent:
            raise InsufficientPool(f"agent {n} received no samples and surplus cannot cover it")
        pick = np.sort(rng.choice(owners.size, size=z_per_agent, replace=False))
        taken = []
        for m in np.unique(owners[pick]):
            sel = slots[pick][owners[pick] == m]
            taken.append(surplus[m][sel])
            surplus[m] = np.delete(surplus[m], sel)
        keep[n] = rng.permutation(np.concatenate(taken))
        surplus[n] = keep[n][:0]
        allocation[n] = keep[n].copy()

    keep = np.stack(keep)
    return PartitionedDataset(
        features=pool.features[keep],
        labels=pool.labels[keep],
        surplus=tuple(pool.take(s) for s in surplus),
        allocation=tuple(pool.take(a) for a in allocation),
        test_set=test_set if test_set is not None else SampleArray(np.zeros((0, pool.dim)), np.zeros(0)),
        beta=float(beta),
        seed=seed,
        n_classes=c,
    )


@dataclass(frozen=True)
class PerturbationIndex:
    agent: int
    position: int
    replacement: tuple  # (features, label)


def draw_perturbation(ds, rng, agents=None):
    """Draw ``(n, z)`` uniformly and a replacement from agent ``n``'s surplus.

    Agents without surplus fall back to their own allocation.
    """
    agents = range(ds.n_agents) if agents is None else list(agents)
    n = int(rng.choice(list(agents)))
    z = int(rng.integers(ds.z))
    src = ds.surplus[n] if len(ds.surplus[n]) else ds.allocation[n]
    f, y = src[int(rng.integers(len(src)))]
    return PerturbationIndex(n, z, (np.array(f, dtype=float), y))


def perturb(ds, idx):
    """Return a copy of ``ds`` with sample ``(idx.agent, idx.position)`` replaced."""
    if not (0 <= idx.agent < ds.n_agents and 0 <= idx.position < ds.z):
        raise IndexOutOfRange(f"({idx.agent}, {idx.position}) outside {ds.n_agents} x {ds.z}")
    feats = ds.features.copy()
    labels = ds.labels.copy()
    feats[idx.agent, idx.position] = idx.replacement[0]
    labels[idx.agent, idx.position] = idx.replacement[1]
    return PartitionedDataset(feats, labels, ds.surplus, ds.allocation, ds.test_set, ds.beta, ds.seed, ds.n_classes)


def class_mix(ds, agents=None):
    """Class distribution of the agents' local data distributions, averaged.

    An agent's distribution is the class mix of its Dirichlet allocation.
    Averaging with equal weights matches a population loss that averages the
    agents' expected losses.
    """
    agents = range(ds.n_agents) if agents is None else list(agents)
    mixes = []
    for n in agents:
        labels = ds.allocation[n].labels if len(ds.allocation[n]) else ds.labels[n]
        h = np.bincount(np.asarray(labels, dtype=np.int64), minlength=ds.n_classes).astype(float)
        mixes.append(h / h.sum())
    return np.mean(mixes, axis=0)


def _per_agent_grads(x, feats, labels, reg):
    a = _loss.augment(feats)
    w = x.reshape(-1, a.shape[1])
    logits = a @ w.T
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(labels.size), labels] -= 1.0
    return (p[:, :, None] * a[:, None, :]).reshape(labels.size, -1) + reg * x


def heterogeneity_stats(ds, model_points, reg, agents=None):
    """Probe-point maxima of gradient noise and cross-agent heterogeneity.

    Returns ``(sigma_sq_hat, delta_sq_hat)``; these are maxima over the
    finite probe set, not the suprema the assumptions refer to.
    """
    agents = range(ds.n_agents) if agents is None else list(agents)
    sigma, delta = 0.0, 0.0
    for x in model_points:
        x = np.asarray(x, dtype=float)
        means, noise = [], []
        for n in agents:
            g = _per_agent_grads(x, ds.features[n], ds.labels[n], reg)
            gbar = g.mean(axis=0)
            means.append(gbar)
            noise.append(np.mean(np.sum((g - gbar) ** 2, axis=1)))
        means = np.stack(means)
        gglob = means.mean(axis=0)
        sigma = max(sigma, float(np.mean(noise)))
        delta = max(delta, float(np.mean(np.sum((means - gglob) ** 2, axis=1))))
    return sigma, delta
