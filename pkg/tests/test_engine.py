import dataclasses
import math

import numpy as np
import pytest

from conftest import small_cfg
from byzsim import engine as E
from byzsim import graph
from byzsim.data import PerturbationIndex
from byzsim.errors import ConfigInvalid
from byzsim.loss import augment, grad, stacked_grads
from byzsim.rng import substream


def _sgd_oracle(feats, labels, draws, alphas, reg, x0):
    """Plain single-model SGD, one sample per step."""
    x = x0.copy()
    out = [x.copy()]
    for k, i in enumerate(draws):
        x = x - alphas[k] * grad(x, (feats[i], int(labels[i])), reg)
        out.append(x.copy())
    return np.stack(out)


def test_schedules():
    s = E.StepSchedule("theory_k0", mu=0.5, offset=4)
    assert s.alpha(0) == 1 / (0.5 * 4) and s.alpha(6) == 1 / (0.5 * 10)
    assert E.StepSchedule("theory_k1", mu=0.5, offset=4).alpha(1) == 2 / (0.5 * 5)
    assert E.StepSchedule("experiment", a=1.0, b=0.01).alpha(100) == 0.5


def test_auto_offset_is_smallest_valid():
    for kind in ("theory_k0", "theory_k1"):
        k = E.auto_offset(kind, mu=0.1, l_smooth=3.7)
        scale = 1.0 if kind == "theory_k0" else 2.0
        assert scale / (0.1 * k) <= 1 / (2 * 3.7)
        assert scale / (0.1 * (k - 1)) > 1 / (2 * 3.7)


def test_theory_offset_too_small_rejected():
    with pytest.raises(ConfigInvalid, match="schedule.offset"):
        E.prepare(small_cfg(**{"schedule.kind": "theory_k0", "schedule.offset": 1.0}))


def test_trace_layout_and_nonnegative_consensus():
    tr = E.run_config(small_cfg(**{"run.metrics": ["consensus", "train_loss", "opt_error", "test_loss", "gap"]}))
    lines = tr.to_csv().splitlines()
    assert lines[0] == ",".join(E.CSV_COLUMNS)
    assert tr.step == [0, 20, 40, 60, 80, 100]
    assert min(tr.H_k) >= 0 and tr.H_k[0] == 0.0
    assert tr.train_loss[0] == pytest.approx(math.log(3))
    assert min(tr.opt_error) >= -1e-9
    assert tr.gap[-1] == pytest.approx(tr.test_loss[-1] - tr.train_loss[-1])


def test_unrequested_metrics_are_nan():
    tr = E.run_config(small_cfg(**{"run.metrics": ["consensus"]}))
    assert math.isnan(tr.final("gap")) and "nan" in tr.to_csv()


def test_complete_graph_equals_parallel_sgd():
    cfg = small_cfg(**{"topology.kind": "complete", "topology.n_agents": 6, "run.steps": 200})
    setup = E.prepare(cfg)
    traj = E.average_trajectory(setup)
    data = setup.local_data
    feats, labels = augment(data.features), data.labels
    x = np.zeros(setup.n_params)
    rows = np.arange(6)
    for k in range(200):
        assert np.max(np.abs(traj[k] - x)) <= 1e-12
        idx = setup.draws[:, k]
        g = stacked_grads(np.tile(x, (6, 1)), feats[rows, idx], labels[rows, idx], cfg.loss.reg)
        x = x - setup.schedule.alpha(k) * g.mean(axis=0)


def test_single_agent_is_plain_sgd():
    cfg = small_cfg(**{"topology.kind": "complete", "topology.n_agents": 1, "run.steps": 80})
    setup = E.prepare(cfg)
    traj = E.average_trajectory(setup)
    d = setup.local_data
    ref = _sgd_oracle(d.features[0], d.labels[0], setup.draws[0], setup.schedule.alphas(80), cfg.loss.reg,
                      np.zeros(setup.n_params))
    assert np.allclose(traj, ref, atol=1e-12, rtol=0)


def test_identical_data_single_sample_keeps_consensus():
    setup = E.prepare(small_cfg(**{"data.z_per_agent": 1, "run.metrics": ["consensus"]}))
    ds = setup.dataset
    same = dataclasses.replace(
        ds, features=np.repeat(ds.features[:1], ds.n_agents, axis=0), labels=np.repeat(ds.labels[:1], ds.n_agents, axis=0)
    )
    tr = E._run(dataclasses.replace(setup, dataset=same))
    # rows of W sum to 1 only up to rounding, so identical models agree to machine precision
    assert max(tr.H_k) <= 1e-25


def test_honest_average_conservation():
    cfg = small_cfg(**{"run.steps": 60})
    setup = E.prepare(cfg)
    sim = E._Simulator(setup)
    states = []
    sim.run(lambda k, x: states.append(x.copy()), set(range(61)))
    rows = np.arange(sim.n)
    for k in range(60):
        idx = setup.draws[:, k]
        g = stacked_grads(states[k], sim.feats[rows, idx], sim.labels[rows, idx], cfg.loss.reg)
        expected = states[k].mean(axis=0) - sim.alphas[k] * g.mean(axis=0)
        assert np.max(np.abs(states[k + 1].mean(axis=0) - expected)) <= 1e-12


def test_byzantine_runner_without_byzantine_matches_attack_free():
    cfg = small_cfg()
    assert E.run_byzantine(cfg).to_csv() == E.run_attack_free(cfg).to_csv()


def test_attack_free_preconditions():
    with pytest.raises(ConfigInvalid):
        E.run_attack_free(small_cfg(**{"topology.n_byzantine": 1, "attack.kind": "gaussian"}))
    with pytest.raises(ConfigInvalid):
        E.run_attack_free(small_cfg(**{"aggregator.kind": "tm"}))


def test_silent_byzantine_agents_equal_honest_subgraph_run():
    cfg = small_cfg(**{"topology.n_agents": 7, "topology.n_byzantine": 2, "run.steps": 50})
    setup = E.prepare(cfg)
    traj = E.average_trajectory(setup)
    w = graph.induced_nonbyzantine_matrix(setup.topology, setup.full_w).weights
    d = setup.local_data
    feats, labels = augment(d.features), d.labels
    rows = np.arange(5)
    x = np.zeros((5, setup.n_params))
    for k in range(50):
        assert np.max(np.abs(traj[k] - x.mean(axis=0))) <= 1e-12
        idx = setup.draws[:, k]
        x = w @ (x - setup.schedule.alpha(k) * stacked_grads(x, feats[rows, idx], labels[rows, idx], cfg.loss.reg))


def test_sign_flip_hurts_mean_more_than_tm():
    def opt(agg):
        vals = []
        for seed in range(3):
            cfg = small_cfg(**{"topology.n_agents": 8, "topology.n_byzantine": 2, "attack.kind": "sign_flip",
                               "aggregator.kind": agg, "run.steps": 300, "run.master_seed": seed})
            vals.append(E.run_config(cfg).final("opt_error"))
        return np.mean(vals)

    assert opt("mean") >= 2 * opt("tm")


def test_gaussian_attack_with_tm_stays_finite():
    cfg = small_cfg(**{"topology.n_agents": 6, "topology.n_byzantine": 1, "attack.kind": "gaussian",
                       "aggregator.kind": "tm", "run.steps": 10_000, "run.eval_every": 1000,
                       "run.metrics": ["consensus", "train_loss", "test_loss", "gap"]})
    tr = E.run_config(cfg)
    for col in ("H_k", "train_loss", "test_loss", "gap"):
        assert np.all(np.isfinite(tr.as_array(col)))


@pytest.mark.parametrize("attack,agg", [("sign_flip", "ios"), ("alie", "scc"), ("sample_dup", "tm"), ("gaussian", "mean")])
def test_threads_do_not_change_traces(attack, agg):
    cfg = small_cfg(**{"topology.n_agents": 7, "topology.n_byzantine": 2, "attack.kind": attack, "aggregator.kind": agg})
    one = E.run_config(cfg, threads=1).to_csv()
    assert E.run_config(cfg, threads=3).to_csv() == one
    assert E.run_config(cfg, threads=1).to_csv() == one


def test_sample_dup_target_is_honest():
    setup = E.prepare(small_cfg(**{"topology.n_agents": 7, "topology.n_byzantine": 2, "attack.kind": "sample_dup"}))
    assert setup.attack.dup_target in setup.agents
    with pytest.raises(ConfigInvalid):
        E.prepare(small_cfg(**{"topology.n_agents": 7, "topology.n_byzantine": 2, "attack.kind": "sample_dup",
                               "attack.dup_target": sorted(setup.topology.byzantine)[0]}))


def test_stability_zero_for_identity_replacement():
    cfg = small_cfg()
    setup = E.prepare(cfg)
    d = setup.local_data
    pairs = [PerturbationIndex(n, z, (d.features[n, z].copy(), int(d.labels[n, z]))) for n, z in [(0, 0), (3, 7)]]
    est = E.run_coupled_stability(cfg, setup=setup, pairs=pairs)
    assert np.all(est.mean_sq_dist == 0.0)


def test_stability_starts_at_zero_and_reports_pairs():
    est = E.run_coupled_stability(small_cfg(), p_sample=4)
    assert est.steps[0] == 0 and est.mean_sq_dist[0] == 0.0
    assert est.n_pairs == 4 and est.final() > 0
    assert est.to_csv().splitlines()[0] == "step,stability"


def test_coupled_runs_agree_until_replaced_sample_is_drawn():
    cfg = small_cfg(**{"run.steps": 100})
    setup = E.prepare(cfg)
    d = setup.local_data
    n, z = 2, 5
    idx = PerturbationIndex(n, z, (d.features[n, z] + 3.0, int(d.labels[n, z])))
    from byzsim.data import perturb

    a = E.average_trajectory(setup)
    b = E.average_trajectory(setup, perturb(d, idx))
    first = int(np.flatnonzero(setup.draws[n] == z)[0])
    assert np.array_equal(a[: first + 1], b[: first + 1])
    assert not np.array_equal(a[first + 1], b[first + 1])


def test_stability_decreases_with_z():
    def est(z):
        return np.mean([
            E.run_coupled_stability(small_cfg(**{"data.z_per_agent": z, "run.steps": 300, "run.master_seed": s}), 16).final()
            for s in range(3)
        ])

    assert est(100) < est(50)


def test_no_cooperation_is_single_agent_sgd():
    cfg = small_cfg(**{"run.steps": 60, "run.eval_every": 10})
    setup = E.prepare(cfg)
    tr = E.run_no_cooperation(cfg, agent=2, setup=setup)
    n = setup.agents.index(2)
    d = setup.local_data
    ref = _sgd_oracle(d.features[n], d.labels[n], substream(cfg.run.master_seed, "sample", 2).integers(0, d.z, 60),
                      setup.schedule.alphas(60), cfg.loss.reg, np.zeros(setup.n_params))
    assert np.allclose(np.stack(tr.checkpoints), ref[::10], atol=1e-12, rtol=0)
    assert tr.extra["agent"] == 2
    assert len(tr.extra["local_gap"]) == len(tr.step)


def test_no_cooperation_local_gap_shrinks_with_z():
    def gap(z):
        return np.mean([
            E.run_no_cooperation(small_cfg(**{"data.beta": 1e6, "data.z_per_agent": z, "run.steps": 2000,
                                              "run.eval_every": 2000, "run.master_seed": s})).final("local_gap")
            for s in range(3)
        ])

    g250, g1000 = gap(250), gap(1000)
    assert g1000 < g250
    assert g250 / max(g1000, 1e-12) > 2


def test_discrepancy_proxy():
    solo = E.prepare(small_cfg(**{"topology.kind": "complete", "topology.n_agents": 1}))
    x = np.random.default_rng(0).standard_normal(solo.n_params)
    assert E.estimate_discrepancy_proxy(solo, [x], 0) == 0.0
    with pytest.raises(ValueError):
        E.estimate_discrepancy_proxy(solo, [], 0)
    proxies = []
    for beta in (0.05, 1.0, 100.0):
        setup = E.prepare(small_cfg(**{"data.beta": beta}))
        cps = E.run_config(setup.cfg, setup).checkpoints
        proxies.append(max(E.estimate_discrepancy_proxy(setup, cps, g) for g in setup.agents))
    assert proxies[0] > proxies[1] > proxies[2]


def test_test_population_weights():
    setup = E.prepare(small_cfg())
    test = setup.dataset.test_set
    x = np.random.default_rng(1).standard_normal(setup.n_params) * 0.5
    pop = E.TestPopulation(test, np.array([1.0, 0.0, 0.0]))
    mask = test.labels == 0
    assert pop.loss(x, 0.0) == pytest.approx(E._mean_loss(x, augment(test.features[mask]), test.labels[mask], 0.0))
    with pytest.raises(ValueError):
        E.TestPopulation(test, np.ones(4))


def test_run_summary_fields():
    setup = E.prepare(small_cfg(**{"topology.n_agents": 7, "topology.n_byzantine": 2, "attack.kind": "alie",
                                   "aggregator.kind": "ios"}))
    tr = E.run_config(setup.cfg, setup)
    cert = E.certify(setup, trials=20)
    summary = E.run_summary(setup, tr, 0.1, cert)
    for key in ("lambda", "chi_sq", "sigma_sq_hat", "delta_sq_hat", "rho_certificate", "wall_time_s", "config"):
        assert key in summary
    assert summary["rho_certificate"]["kind"] == "empirical"
