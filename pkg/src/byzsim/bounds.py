"""Closed-form consensus constants and bound-shape evaluators.

``lemma*`` and ``theorem2_opt_bound`` carry fully specified constants.
The ``*_shape`` evaluators (and ``theorem5_opt_bound`` by default) set the
unspecified multiplicative constants to 1; they are meant for trend overlays
only.
"""
import math
from dataclasses import asdict, dataclass

from .errors import ContractionViolated


@dataclass(frozen=True)
class BoundInputs:
    mu: float
    l_smooth: float
    sigma_sq: float
    delta_sq: float
    lam: float
    chi_sq: float = 0.0
    rho: float = 0.0
    n_agents: int = 1
    z_per_agent: int = 1
    k_offset: float = 1.0
    init_dist_sq: float = 0.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 < self.lam <= 1:
            raise ValueError("lambda must lie in (0, 1]")

    @property
    def noise(self):
        return self.sigma_sq + self.delta_sq

    @property
    def byz_factor(self):
        return 4.0 * self.rho**2 * self.n_agents + self.chi_sq


def c1(lam):
    return 24.0 * (1.0 - lam) / lam**3


def rho_star(lam, n_agents):
    return lam / (8.0 * math.sqrt(n_agents))


def contraction_margin(lam, n_agents, rho):
    """``w = lambda - 8 rho sqrt(N)``; raises when nonpositive."""
    w = lam - 8.0 * rho * math.sqrt(n_agents)
    if w <= 0:
        raise ContractionViolated(
            f"contraction condition rho < lambda/(8 sqrt(N)) = {rho_star(lam, n_agents):.6g} fails for rho = {rho:.6g}"
        )
    return w


def c2(w):
    return 96.0 * (1.0 - w) / w**3


def _horizon(bi, k):
    t = k + bi.k_offset - 1
    if t <= 0:
        raise ValueError("k + k_offset - 1 must be positive")
    return t


def lemma2_consensus_bound(bi, k):
    return c1(bi.lam) * bi.noise / (bi.mu**2 * (k + bi.k_offset) ** 2)


def lemma3_consensus_bound(bi, k):
    w = contraction_margin(bi.lam, bi.n_agents, bi.rho)
    return c2(w) * bi.noise / (bi.mu**2 * (k + bi.k_offset) ** 2)


def theorem2_terms(bi, k):
    """The three optimization-error terms for the attack-free schedule.

    The heterogeneity constant is the proof-level ``c1 * L^2``.
    """
    t = _horizon(bi, k)
    init = bi.l_smooth * (bi.k_offset - 1) / (2.0 * t) * bi.init_dist_sq
    noise = bi.l_smooth * bi.sigma_sq * math.log(t) / (2.0 * bi.mu**2 * bi.n_agents * t)
    het = c1(bi.lam) * bi.l_smooth**2 * bi.noise / (bi.mu**3 * t)
    return init, noise, het


def theorem2_opt_bound(bi, k):
    return sum(theorem2_terms(bi, k))


def theorem5_opt_bound(bi, k, constants="unit"):
    """Byzantine-resilient optimization-error bound.

    ``constants="unit"`` sets the three free constants to 1;
    ``constants="proof"`` uses ``4 c2 L^2 / mu^3``, ``48 c2 L^3 / mu^4`` and
    ``(32 + 2 c2) L / mu^2``.
    """
    w = contraction_margin(bi.lam, bi.n_agents, bi.rho)
    t = _horizon(bi, k)
    if constants == "unit":
        ca, cb, cc = 1.0, 1.0, 1.0
    elif constants == "proof":
        k2, L, mu = c2(w), bi.l_smooth, bi.mu
        ca = 4 * k2 * L**2 / mu**3
        cb = 48 * k2 * L**3 / mu**4
        cc = (32 + 2 * k2) * L / mu**2
    else:
        raise ValueError("constants must be 'unit' or 'proof'")
    return (
        ca * bi.noise / t
        + bi.l_smooth * (bi.k_offset - 1) * bi.init_dist_sq / (2.0 * t)
        + 4.0 * bi.l_smooth * bi.sigma_sq * math.log(t) / (bi.mu**2 * bi.n_agents * t)
        + cb * bi.byz_factor * bi.noise / t
        + cc * bi.byz_factor * bi.noise
    )


def theorem3_gen_shape(bi):
    """``(||x0 - x*||^2 + sigma^2 + delta^2) / (mu N Z)``, log factors dropped."""
    return (bi.init_dist_sq + bi.sigma_sq + bi.delta_sq) / (bi.mu * bi.n_agents * bi.z_per_agent)


def theorem6_gen_shape(bi):
    contraction_margin(bi.lam, bi.n_agents, bi.rho)
    extra = bi.byz_factor * bi.noise * (1.0 + 1.0 / (bi.mu * bi.n_agents * bi.z_per_agent))
    return theorem3_gen_shape(bi) + extra


def theorem7_gen_shape(bi, phi_proxy):
    """Single-agent training: ``(||x0 - x*_n||^2 + sigma^2) / (mu Z) + phi``."""
    return (bi.init_dist_sq + bi.sigma_sq) / (bi.mu * bi.z_per_agent) + phi_proxy


def evaluate_all(bi, k_grid, phi_proxy=0.0):
    """Every evaluator on ``k_grid``; violated contraction yields ``None`` entries."""

    def guarded(fn, *a):
        try:
            return fn(*a)
        except ContractionViolated:
            return None

    out = {
        "inputs": asdict(bi),
        "c1": c1(bi.lam),
        "rho_star": rho_star(bi.lam, bi.n_agents),
        "contraction_margin": bi.lam - 8.0 * bi.rho * math.sqrt(bi.n_agents),
        "shapes_note": "shape evaluators use unit constants",
        "theorem3_gen_shape": theorem3_gen_shape(bi),
        "theorem6_gen_shape": guarded(theorem6_gen_shape, bi),
        "theorem7_gen_shape": theorem7_gen_shape(bi, phi_proxy),
        "per_k": [],
    }
    for k in k_grid:
        out["per_k"].append({
            "k": k,
            "lemma2_consensus": lemma2_consensus_bound(bi, k),
            "lemma3_consensus": guarded(lemma3_consensus_bound, bi, k),
            "theorem2_opt": theorem2_opt_bound(bi, k),
            "theorem5_opt": guarded(theorem5_opt_bound, bi, k),
        })
    return out
