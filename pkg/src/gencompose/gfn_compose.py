"""Building composed sampling policies from bases plus a state classifier.

A classifier (exact oracle or learned network) turns m frozen base policies
into new samplers without retraining:

- `mixture_policy` blends base action distributions, state by state, with the
  classifier's posterior over which base the trajectory came from;
- `guided_policy` steers any policy toward states from which a label multiset
  remains probable, multiplying each transition by the classifier's
  probability ratio Q(obs | child) / Q(obs | state);
- `composed_policy` chains the two, which samples the conditional
  distribution over terminal states given the observations. Labels (1,2)
  produce the harmonic-style overlap of two bases, (1,1) the contrast of base
  1 against base 2, and larger multisets the general product-over-power
  posterior.

All builders return fully materialized per-state probability tables, so the
result can be sampled, enumerated, or itself used as a base.
"""

from __future__ import annotations

import numpy as np

from .errors import BadWeights
from .grid import ACTION_DOWN, ACTION_RIGHT, ACTION_STOP, ForwardPolicy
from .nn import log_softmax


def _stack_base_probs(bases: list[ForwardPolicy]) -> np.ndarray:
    if len(bases) < 2:
        raise ValueError("need at least two base policies")
    dag = bases[0].dag
    if any(b.dag.height != dag.height for b in bases):
        raise ValueError("all base policies must share one grid")
    return np.stack([b.probs for b in bases], axis=0)


def mixture_policy(
    bases: list[ForwardPolicy],
    classifier,
    weights: np.ndarray | None = None,
) -> ForwardPolicy:
    """State-dependent blend of base policies under the classifier posterior."""
    stacked = _stack_base_probs(bases)
    if classifier.n_bases != len(bases):
        raise ValueError(
            f"classifier covers {classifier.n_bases} bases, got {len(bases)} policies"
        )
    q = classifier.mixture_weights()
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(bases),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise BadWeights(f"weights must be a simplex vector of length {len(bases)}")
        scaled = q * w
        total = scaled.sum(axis=1, keepdims=True)
        q = np.divide(scaled, total, out=np.zeros_like(scaled), where=total > 0.0)
    probs = np.einsum("sm,mst->st", q, stacked)
    dead = probs.sum(axis=1) == 0.0
    for base in bases:
        if base.dead is not None:
            dead |= base.dead
    return ForwardPolicy(bases[0].dag, probs, dead=dead if dead.any() else None)


def guided_policy(
    policy: ForwardPolicy,
    classifier,
    observations,
    alpha: float | None = None,
) -> ForwardPolicy:
    """Condition a policy on a label multiset via classifier probability ratios.

    The guided transition weight is P(a | s) * Q(obs | child(s, a)); softmax
    normalization over legal actions absorbs the 1 / Q(obs | s) factor. States
    from which every action leads to zero observation probability are marked
    dead; sampling from one raises ZeroObservationProbability.
    """
    dag = policy.dag
    h = dag.height
    n_cells = dag.n_cells
    log_nt = classifier.log_joint_nonterminal(observations, alpha)
    log_term = classifier.log_joint_terminal(observations, alpha)

    idx = np.arange(n_cells)
    rows, cols = np.divmod(idx, h)
    child_log = np.full((n_cells, 3), -np.inf)
    down_ok = rows < h - 1
    right_ok = cols < h - 1
    child_log[down_ok, ACTION_DOWN] = log_nt[idx[down_ok] + h]
    child_log[right_ok, ACTION_RIGHT] = log_nt[idx[right_ok] + 1]
    child_log[:, ACTION_STOP] = log_term

    with np.errstate(divide="ignore"):
        logits = np.log(policy.probs) + child_log
    dead = np.all(np.isneginf(logits), axis=1)
    if policy.dead is not None:
        dead |= policy.dead
    probs = np.zeros_like(logits)
    live = ~dead
    if live.any():
        probs[live] = np.exp(log_softmax(logits[live], axis=1))
    return ForwardPolicy(dag, probs, dead=dead if dead.any() else None)


def composed_policy(
    bases: list[ForwardPolicy],
    classifier,
    observations,
    alpha: float | None = None,
    weights: np.ndarray | None = None,
) -> ForwardPolicy:
    """Sampler for the posterior over terminal states given the observations."""
    blended = mixture_policy(bases, classifier, weights)
    return guided_policy(blended, classifier, observations, alpha)
