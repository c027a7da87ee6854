import numpy as np
import pytest

from byzsim.attack import AttackSpec, attack_messages
from byzsim.errors import NoVisibleHonest


def test_sign_flip_of_equal_messages():
    v = np.array([1.0, -2.0, 3.0])
    out = attack_messages(AttackSpec("sign_flip"), 0, {1: v, 2: v.copy()}, 2, np.random.default_rng(0))
    assert len(out) == 2 and all(np.array_equal(m, -v) for m in out)


def test_alie_zero_scale_is_mean():
    vis = {1: np.array([1.0, 4.0]), 3: np.array([3.0, 0.0])}
    out = attack_messages(AttackSpec("alie", alie_scale=0.0), 0, vis, 1, None)
    assert np.array_equal(out[0], np.array([2.0, 2.0]))


def test_alie_population_std():
    vis = {1: np.array([1.0]), 2: np.array([3.0])}
    out = attack_messages(AttackSpec("alie", alie_scale=1.0), 0, vis, 3, None)
    assert all(m[0] == 3.0 for m in out)


def test_alie_single_visible_has_zero_std():
    out = attack_messages(AttackSpec("alie", alie_scale=5.0), 0, {4: np.array([2.0, 7.0])}, 1, None)
    assert np.array_equal(out[0], np.array([2.0, 7.0]))


def test_sample_dup_copies_target():
    t = np.array([0.25, 0.5])
    out = attack_messages(AttackSpec("sample_dup", dup_target=6), 0, {1: np.zeros(2)}, 2, None, target_msg=t)
    assert all(np.array_equal(m, t) for m in out)
    out = attack_messages(AttackSpec("sample_dup", dup_target=1), 0, {1: t}, 1, None)
    assert np.array_equal(out[0], t)
    with pytest.raises(NoVisibleHonest):
        attack_messages(AttackSpec("sample_dup", dup_target=9), 0, {1: t}, 1, None)


def test_gaussian_is_standard_normal_and_seeded():
    a = attack_messages(AttackSpec("gaussian"), 0, {1: np.zeros(4)}, 2, np.random.default_rng(5))
    b = attack_messages(AttackSpec("gaussian"), 0, {1: np.zeros(4)}, 2, np.random.default_rng(5))
    assert np.array_equal(np.array(a), np.array(b))
    big = np.array(attack_messages(AttackSpec("gaussian"), 0, {}, 4000, np.random.default_rng(1), dim=5))
    assert abs(big.mean()) < 0.03 and abs(big.var() - 1) < 0.03


def test_needs_visible_honest():
    for kind in ("alie", "sign_flip"):
        with pytest.raises(NoVisibleHonest):
            attack_messages(AttackSpec(kind), 0, {}, 1, None)


def test_none_and_zero_count_send_nothing():
    assert attack_messages(AttackSpec("none"), 0, {1: np.zeros(2)}, 3, None) == []
    assert attack_messages(AttackSpec("sign_flip"), 0, {1: np.zeros(2)}, 0, None) == []


def test_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec("lie")
    with pytest.raises(ValueError):
        AttackSpec("alie", alie_scale=float("inf"))
