"""Robust aggregation under Byzantine attacks, compared with attack-free training.

Usage: python demos/byzantine_attacks.py

Two of ten agents are Byzantine. For each attack and aggregation rule the
script prints the final generalization gap and optimization error (averaged
over three seeds), then the empirical contraction certificate of each rule
next to the threshold lambda / (8 sqrt(N)).
"""
import numpy as np

from byzsim import RunConfig
from byzsim.engine import certify, prepare, run_config

TASK = {"data.dim": 100, "data.test_size": 50_000, "data.beta": 0.05, "data.z_per_agent": 500,
        "run.steps": 2000, "run.eval_every": 2000}
SEEDS = (0, 1, 2)


def finals(**over):
    traces = [run_config(RunConfig().replace(**{**TASK, **over, "run.master_seed": s})) for s in SEEDS]
    return np.mean([t.final("gap") for t in traces]), np.mean([t.final("opt_error") for t in traces])


def main():
    print(f"{'setting':<28} {'gap':>8} {'opt_error':>10}")
    gap, opt = finals()
    print(f"{'attack-free, mean':<28} {gap:8.4f} {opt:10.4f}")
    for attack in ("sign_flip", "gaussian", "alie", "sample_dup"):
        for rule in ("mean", "tm", "ios", "scc"):
            gap, opt = finals(**{"topology.n_byzantine": 2, "attack.kind": attack, "aggregator.kind": rule})
            print(f"{attack + ', ' + rule:<28} {gap:8.4f} {opt:10.4f}")

    print(f"\n{'rule':<6} {'rho_hat':>9} {'rho_star':>9} passes")
    for rule in ("mean", "tm", "ios", "scc"):
        setup = prepare(RunConfig().replace(**{**TASK, "topology.n_byzantine": 2, "aggregator.kind": rule}))
        cert = certify(setup, trials=300)
        print(f"{rule:<6} {cert.rho_hat:9.4f} {cert.rho_star:9.4f} {cert.passes}")


if __name__ == "__main__":
    main()
