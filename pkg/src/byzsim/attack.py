"""Byzantine message generators."""
from dataclasses import dataclass

import numpy as np

from .errors import NoVisibleHonest

KINDS = ("none", "gaussian", "sample_dup", "alie", "sign_flip")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    alie_scale: float = 0.3
    dup_target: object = None  # honest agent id, fixed per run; None = choose at seed time

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.alie_scale):
            raise ValueError("alie_scale must be finite")


def attack_messages(spec, recipient, honest_msgs_visible, byz_count, rng, target_msg=None, dim=None):
    """Messages the ``byz_count`` Byzantine neighbors of ``recipient`` send it.

    ``honest_msgs_visible`` maps honest neighbor id to its current message
    (the recipient itself excluded). ``target_msg`` is the duplicated agent's
    message for ``sample_dup``; if omitted it is looked up in the visible set.
    """
    if spec.kind == "none" or byz_count == 0:
        return []
    visible = [honest_msgs_visible[m] for m in sorted(honest_msgs_visible)]
    if spec.kind == "gaussian":
        if dim is None:
            if not visible:
                raise NoVisibleHonest("gaussian attack needs a message dimension")
            dim = np.asarray(visible[0]).size
        return list(rng.standard_normal((byz_count, dim)))
    if spec.kind == "sample_dup":
        if target_msg is None:
            if spec.dup_target not in honest_msgs_visible:
                raise NoVisibleHonest(f"duplicate target {spec.dup_target} is not visible to {recipient}")
            target_msg = honest_msgs_visible[spec.dup_target]
        msg = np.array(target_msg, dtype=float)
        return [msg.copy() for _ in range(byz_count)]
    if not visible:
        raise NoVisibleHonest(f"agent {recipient} has no honest neighbors to imitate")
    stacked = np.asarray(visible, dtype=float)
    mean = stacked.mean(axis=0)
    if spec.kind == "alie":
        msg = mean + spec.alie_scale * stacked.std(axis=0)
    else:  # sign_flip
        msg = -mean
    return [msg.copy() for _ in range(byz_count)]
