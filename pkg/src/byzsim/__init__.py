"""Deterministic simulator for decentralized SGD with and without Byzantine agents."""
from .config import RunConfig, load_config
from .engine import (
    MetricsTrace,
    StabilityEstimate,
    prepare,
    run_attack_free,
    run_byzantine,
    run_coupled_stability,
    run_no_cooperation,
)

__all__ = [
    "RunConfig",
    "load_config",
    "MetricsTrace",
    "StabilityEstimate",
    "prepare",
    "run_attack_free",
    "run_byzantine",
    "run_coupled_stability",
    "run_no_cooperation",
]
