"""State classifiers over the grid DAG: exact oracle and learned network.

Both answer the same queries about the uniform mixture over m base samplers:

- mixture weights q(i | s): probability the trajectory through non-terminal
  state s came from base i;
- joint observation probabilities Q(y_1..y_k | s) for a label multiset, where
  slot 1 carries the uniform prior over bases and slots >= 2 are optionally
  alpha-reweighted (two bases only). Conditioning a sample on such labels
  yields the harmonic-style and contrast-style compositions: labels (1,2)
  select the overlap of bases 1 and 2, repeated labels (1,1) sharpen base 1
  against base 2, and the alpha reweighting sweeps between the two extremes.

The oracle computes these by dynamic programming on enumerated policies; the
learned classifier is a two-head MLP trained from base rollouts alone, with
the non-terminal head distilled from an exponential-moving-average copy of
the terminal head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import InconsistentBases, OracleMismatch
from .grid import ACTION_DOWN, ACTION_RIGHT, ForwardPolicy, GridDag, sample_trajectory_batch, visit_probabilities
from .nn import (
    AdamState,
    EmaShadow,
    Mlp,
    adam_step,
    ema_update,
    load_mlp,
    log_softmax,
    save_mlp,
    softmax,
    softmax_cross_entropy,
)
from .tables import DensityTable, l1_distance


def parameterized_label_weights(alpha: float, terminal_marginals: np.ndarray) -> np.ndarray:
    """Reweight two-way classifier marginals to an (alpha, 1-alpha) prior.

    Given q_i(x) under a uniform prior over two bases, returns
    w_1 = alpha q_1 / (alpha q_1 + (1-alpha) q_2) and w_2 = 1 - w_1, the
    marginals the same likelihoods would produce under the tilted prior.
    Rows where both inputs are zero come back uniform (they belong to dead
    states and never influence a reachable computation).
    """
    q = np.asarray(terminal_marginals, dtype=np.float64)
    if q.shape[-1] != 2:
        raise ValueError("alpha reweighting is defined for exactly two bases")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly inside (0, 1), got {alpha}")
    scaled = q * np.array([alpha, 1.0 - alpha])
    total = scaled.sum(axis=-1, keepdims=True)
    out = np.full_like(scaled, 0.5)
    np.divide(scaled, total, out=out, where=total > 0.0)
    return out


def _reweight(marginals: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """General prior reweighting of uniform-prior marginals."""
    scaled = marginals * weights
    total = scaled.sum(axis=-1, keepdims=True)
    out = np.zeros_like(scaled)
    np.divide(scaled, total, out=out, where=total > 0.0)
    return out


def _validate_observations(observations, m: int) -> tuple[int, ...]:
    obs = tuple(int(y) for y in observations)
    if not obs:
        raise ValueError("need at least one observation label")
    if any(y < 1 or y > m for y in obs):
        raise ValueError(f"labels must lie in 1..{m}, got {obs}")
    return obs


class ClassifierOracle:
    """Exact classifier computed from enumerated base policies.

    Two distinct quantities live here and they genuinely differ on a DAG
    whose paths remerge, so they must not be conflated. `mixture_weights`
    is the visit-ratio posterior over bases (the chance that a trajectory
    passing through s was generated by base i); blending the base policies
    with it yields a policy whose state-visit law is the average of the base
    laws, which is what makes the mixture sampler exact. `joint_values` is
    the expected future observation probability under that blended policy,
    computed by a backward sweep; guidance needs this one because the
    per-state renormalization of the guided policy only telescopes into the
    exact posterior when the value function is consistent with the blended
    policy's own dynamics.

    Construction cross-checks both sweeps through independent routes and
    raises OracleMismatch on disagreement.
    """

    def __init__(
        self,
        bases: list[ForwardPolicy],
        base_dists: list[DensityTable] | None = None,
        tol: float = 1e-6,
    ) -> None:
        if len(bases) < 2:
            raise ValueError("need at least two base policies")
        self.dag: GridDag = bases[0].dag
        if any(b.dag.height != self.dag.height for b in bases):
            raise ValueError("all base policies must share one grid")
        self.bases = list(bases)
        self.m = len(bases)

        visits, masses = [], []
        for i, base in enumerate(bases):
            v, t = visit_probabilities(base)
            visits.append(v)
            masses.append(t)
            if base_dists is not None:
                h = self.dag.height
                enum = DensityTable((h, h), t.reshape(h, h) / t.sum(), t.reshape(h, h) > 0)
                gap = l1_distance(enum, base_dists[i])
                if gap > tol:
                    raise InconsistentBases(
                        f"policy {i + 1} enumerates {gap:.3e} (L1) away from its "
                        f"declared distribution (tolerance {tol:g})"
                    )
        self._visit = np.stack(visits, axis=1)  # (H^2, m)
        self._tmass = np.stack(masses, axis=1)  # (H^2, m)
        self._probs = np.stack([b.probs for b in bases], axis=0)  # (m, H^2, 3)

        self._marg_nt = _reweight(self._visit, np.ones(self.m))
        self._marg_term = _reweight(self._tmass, np.ones(self.m))
        self.dead_nonterminal = self._visit.sum(axis=1) == 0.0
        self.dead_terminal = self._tmass.sum(axis=1) == 0.0
        self.mixture_probs = np.einsum("sm,mst->st", self._marg_nt, self._probs)
        self._joint_cache: dict = {}
        self._self_check()

    # -- shared classifier interface ------------------------------------

    @property
    def n_bases(self) -> int:
        return self.m

    def mixture_weights(self, alpha: float | None = None) -> np.ndarray:
        """(H^2, m) posterior over bases at each non-terminal state."""
        del alpha  # the slot-1 marginal does not depend on the reweighting
        return self._marg_nt

    def terminal_marginals(self, alpha: float | None = None) -> np.ndarray:
        if alpha is None:
            return self._marg_term
        return parameterized_label_weights(alpha, self._marg_term)

    def joint_values(self, observations, alpha: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Linear-scale Q(obs | s) at all (non-terminal, terminal) states."""
        obs = _validate_observations(observations, self.m)
        key = (obs, None if alpha is None else float(alpha).hex())
        hit = self._joint_cache.get(key)
        if hit is not None:
            return hit
        term = self._marg_term[:, obs[0] - 1].copy()
        if len(obs) > 1:
            tail = self.terminal_marginals(alpha)
            for y in obs[1:]:
                term *= tail[:, y - 1]
        nonterm = self._backward_values(term)
        self._joint_cache[key] = (nonterm, term)
        return nonterm, term

    def log_joint_nonterminal(self, observations, alpha: float | None = None) -> np.ndarray:
        nonterm, _ = self.joint_values(observations, alpha)
        with np.errstate(divide="ignore"):
            return np.log(nonterm)

    def log_joint_terminal(self, observations, alpha: float | None = None) -> np.ndarray:
        _, term = self.joint_values(observations, alpha)
        with np.errstate(divide="ignore"):
            return np.log(term)

    # -- internals -------------------------------------------------------

    def _backward_values(self, terminal_values: np.ndarray) -> np.ndarray:
        """J(s) = sum_a P_M(a|s) J(child(s,a)), swept in reverse topological order."""
        h = self.dag.height
        out = np.zeros(self.dag.n_cells)
        pm = self.mixture_probs
        for s in range(self.dag.n_cells - 1, -1, -1):
            r, c = divmod(s, h)
            value = pm[s, 2] * terminal_values[s]
            if r < h - 1:
                value += pm[s, ACTION_DOWN] * out[s + h]
            if c < h - 1:
                value += pm[s, ACTION_RIGHT] * out[s + 1]
            out[s] = value
        return out

    def _self_check(self) -> None:
        """Cross-check the forward and backward sweeps through independent routes.

        First: enumerating the blended policy directly must reproduce the
        average of the per-base visit and terminal-mass sweeps (the identity
        the mixture construction is built on). Second: the backward values of
        the per-base terminal marginals must sum to one across bases at every
        reachable state, since the blended policy terminates with probability
        one and the terminal marginals sum to one wherever it can stop.
        """
        blended = ForwardPolicy(self.dag, self.mixture_probs)
        visit_b, tmass_b = visit_probabilities(blended)
        gap_v = float(np.max(np.abs(visit_b - self._visit.mean(axis=1))))
        gap_t = float(np.max(np.abs(tmass_b - self._tmass.mean(axis=1))))
        if max(gap_v, gap_t) > 1e-12:
            raise OracleMismatch(
                "enumerating the blended policy disagrees with the averaged "
                f"base sweeps by {max(gap_v, gap_t):.3e}"
            )
        total = np.zeros(self.dag.n_cells)
        for i in range(self.m):
            total += self._backward_values(self._marg_term[:, i])
        live = ~self.dead_nonterminal
        gap_1 = float(np.max(np.abs(total[live] - 1.0))) if live.any() else 0.0
        if gap_1 > 1e-12:
            raise OracleMismatch(
                f"backward observation values sum to 1{gap_1:+.3e} across bases"
            )


def exact_classifier(
    base_dists: list[DensityTable],
    base_policies: list[ForwardPolicy],
    n: int | None = None,
    tol: float = 1e-6,
) -> ClassifierOracle:
    """Oracle classifier for the given bases, validated against their tables.

    `n` is accepted for interface parity with the learned classifier; the
    oracle answers observation multisets of any size.
    """
    if n is not None and n < 1:
        raise ValueError("n must be at least 1")
    return ClassifierOracle(base_policies, base_dists, tol)


class SculptClassifier:
    """Two-head MLP classifier over grid states.

    Input is the one-hot cell encoding plus a terminal flag and, when
    `alpha_feature` is set, the log-odds of the query alpha. The first m
    outputs are the terminal head (base posterior at terminal states); the
    remaining m**n outputs are the joint head over full label tuples at
    non-terminal states.
    """

    def __init__(
        self,
        dag: GridDag,
        m: int,
        n: int,
        hidden: tuple[int, ...] = (256, 256),
        activation: str = "tanh",
        alpha_feature: bool = False,
        rng: np.random.Generator | None = None,
    ) -> None:
        if alpha_feature and m != 2:
            raise ValueError("alpha reweighting is defined for exactly two bases")
        self.dag = dag
        self.m = int(m)
        self.n = int(n)
        self.alpha_feature = bool(alpha_feature)
        in_dim = 2 * dag.height + 1 + (1 if alpha_feature else 0)
        out_dim = self.m + self.m**self.n
        self.net = Mlp([in_dim, *hidden, out_dim], activation, rng or np.random.default_rng(0))
        self._one_hots = dag.one_hot_states()

    # -- encoding ----------------------------------------------------------

    def _alpha_input(self, alpha: float | None) -> float:
        if alpha is None:
            return 0.0
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie strictly inside (0, 1), got {alpha}")
        return math.log(alpha / (1.0 - alpha))

    def encode(self, cells: np.ndarray, terminal: bool, z_alpha: float = 0.0) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        base = self._one_hots[cells]
        flag = np.full((cells.shape[0], 1), 1.0 if terminal else 0.0)
        columns = [base, flag]
        if self.alpha_feature:
            columns.append(np.full((cells.shape[0], 1), float(z_alpha)))
        return np.concatenate(columns, axis=1)

    # -- shared classifier interface ----------------------------------------

    @property
    def n_bases(self) -> int:
        return self.m

    def _joint_log_table(self, alpha: float | None) -> np.ndarray:
        """(H^2, m, ..., m) log joint head over full tuples at non-terminal states."""
        inputs = self.encode(np.arange(self.dag.n_cells), False, self._alpha_input(alpha))
        logits = self.net.forward(inputs)[:, self.m :]
        table = log_softmax(logits, axis=1)
        return table.reshape((self.dag.n_cells,) + (self.m,) * self.n)

    def mixture_weights(self, alpha: float | None = None) -> np.ndarray:
        table = self._joint_log_table(alpha)
        if self.n > 1:
            table = logsumexp(table, axis=tuple(range(2, self.n + 1)))
        return np.exp(table)

    def terminal_marginals(self, alpha: float | None = None) -> np.ndarray:
        inputs = self.encode(np.arange(self.dag.n_cells), True, self._alpha_input(alpha))
        logits = self.net.forward(inputs)[:, : self.m]
        q = np.exp(log_softmax(logits, axis=1))
        if alpha is None:
            return q
        return parameterized_label_weights(alpha, q)

    def log_joint_nonterminal(self, observations, alpha: float | None = None) -> np.ndarray:
        obs = _validate_observations(observations, self.m)
        if len(obs) > self.n:
            raise ValueError(
                f"classifier was trained for at most {self.n} observations, got {len(obs)}"
            )
        table = self._joint_log_table(alpha)
        if len(obs) < self.n:
            table = logsumexp(table, axis=tuple(range(len(obs) + 1, self.n + 1)))
        index = (slice(None),) + tuple(y - 1 for y in obs)
        return table[index]

    def log_joint_terminal(self, observations, alpha: float | None = None) -> np.ndarray:
        obs = _validate_observations(observations, self.m)
        head = self.terminal_marginals(None)
        with np.errstate(divide="ignore"):
            out = np.log(head[:, obs[0] - 1])
            if len(obs) > 1:
                tail = head if alpha is None else parameterized_label_weights(alpha, head)
                for y in obs[1:]:
                    out = out + np.log(tail[:, y - 1])
        return out


def save_classifier(path: str, classifier: SculptClassifier, step: int = 0) -> None:
    save_mlp(
        path,
        classifier.net,
        step=step,
        extra={
            "role": "state_classifier",
            "height": classifier.dag.height,
            "m": classifier.m,
            "n": classifier.n,
            "alpha_feature": classifier.alpha_feature,
        },
    )


def load_classifier(path: str) -> SculptClassifier:
    net, header = load_mlp(path)
    if header.get("role") != "state_classifier":
        raise ValueError(f"{path} does not hold a state classifier checkpoint")
    dag = GridDag(int(header["height"]))
    hidden = tuple(net.sizes[1:-1])
    clf = SculptClassifier(
        dag,
        int(header["m"]),
        int(header["n"]),
        hidden=hidden,
        activation=net.activation,
        alpha_feature=bool(header["alpha_feature"]),
    )
    clf.net = net
    return clf


@dataclass
class ClassifierTrainConfig:
    steps: int = 15000
    batch_per_base: int = 16
    lr: float = 0.001
    ema_beta: float = 0.995
    warmup_frac: float = 0.2
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "tanh"
    alpha_feature: bool = False
    alpha_logit_bound: float = 3.5
    mc_threshold: int = 64
    mc_samples: int = 16
    seed: int = 0
    eval_every: int = 0


@dataclass
class TrainClassifierResult:
    classifier: SculptClassifier
    history: list[dict] = field(repr=False)


def train_classifier(
    bases: list[ForwardPolicy],
    n: int,
    config: ClassifierTrainConfig,
    eval_fn: Callable[[SculptClassifier, int], dict] | None = None,
) -> TrainClassifierResult:
    """Fit a SculptClassifier from rollouts of frozen base policies.

    Each step draws a batch from every base. The terminal head is trained by
    cross-entropy on which base produced each final state. The non-terminal
    joint head is distilled: label tuples are completed by sampling (or fully
    enumerating, when the tuple space is small) from the EMA target copy of
    the terminal head at the trajectory's final state, and every non-terminal
    state along the trajectory is pushed toward those weighted tuples. The
    distillation term is ramped in linearly over the warmup fraction.
    """
    m = len(bases)
    if m < 2:
        raise ValueError("need at least two base policies")
    dag = bases[0].dag
    rng = np.random.default_rng(config.seed)
    clf = SculptClassifier(
        dag,
        m,
        n,
        hidden=config.hidden,
        activation=config.activation,
        alpha_feature=config.alpha_feature,
        rng=rng,
    )
    net = clf.net
    opt = AdamState.for_params(net.params, lr=config.lr)
    shadow = EmaShadow.of(net.params, config.ema_beta)
    target_net = net.copy()
    target_net.params = shadow.shadow  # ema_update mutates in place; keep them aliased

    base_probs = [b.probs for b in bases]
    batch = config.batch_per_base
    rows_total = m * batch
    n_tuples = m**n
    comp_size = m ** (n - 1)
    enumerate_completions = comp_size <= config.mc_threshold
    warmup_steps = max(1, int(round(config.warmup_frac * config.steps)))
    history: list[dict] = []

    for step in range(config.steps):
        if config.alpha_feature:
            z_alpha = float(rng.uniform(-config.alpha_logit_bound, config.alpha_logit_bound))
            alpha = 1.0 / (1.0 + math.exp(-z_alpha))
        else:
            z_alpha, alpha = 0.0, None

        states_rows, terminals, row_base = [], [], []
        for i in range(m):
            st, _, _, term = sample_trajectory_batch(base_probs[i], dag, rng, batch)
            states_rows.append(st)
            terminals.append(term)
            row_base.append(np.full(batch, i))
        states = np.concatenate(states_rows, axis=0)  # (rows_total, 2H-1), -1 padded
        terminal_cells = np.concatenate(terminals)
        base_of_row = np.concatenate(row_base)

        # target-head weights at each trajectory's terminal state
        term_inputs = clf.encode(terminal_cells, True, z_alpha)
        q_target = softmax(target_net.forward(term_inputs)[:, :m], axis=1)
        w = q_target if alpha is None else parameterized_label_weights(alpha, q_target)

        # per-trajectory weights over full label tuples (slot 1 = source base)
        tuple_w = np.zeros((rows_total, n_tuples))
        if n == 1:
            tuple_w[np.arange(rows_total), base_of_row] = 1.0
        elif enumerate_completions:
            grids = np.meshgrid(*([np.arange(m)] * (n - 1)), indexing="ij")
            comp = np.stack([g.ravel() for g in grids], axis=0)  # (n-1, comp_size)
            comp_w = np.ones((rows_total, comp_size))
            for k in range(n - 1):
                comp_w *= w[:, comp[k]]
            for i in range(m):  # rows arrive grouped by source base
                block = slice(i * batch, (i + 1) * batch)
                tuple_w[block, i * comp_size : (i + 1) * comp_size] = comp_w[block]
        else:
            cum = np.cumsum(w, axis=1)
            draws = rng.random((rows_total, config.mc_samples, n - 1))
            labels = (draws[..., None] > cum[:, None, None, :]).sum(axis=-1)
            labels = np.minimum(labels, m - 1)  # guard the cumsum rounding edge
            tids = base_of_row[:, None] * comp_size
            for k in range(n - 1):
                tids = tids + labels[:, :, k] * m ** (n - 2 - k)
            row_idx = np.broadcast_to(np.arange(rows_total)[:, None], tids.shape)
            np.add.at(tuple_w, (row_idx.ravel(), tids.ravel()), 1.0 / config.mc_samples)

        # accumulate tuple weights per visited non-terminal state
        visit_mask = states >= 0
        flat_states = states[visit_mask]
        flat_rows = np.broadcast_to(np.arange(rows_total)[:, None], states.shape)[visit_mask]
        counts = np.zeros((dag.n_cells, n_tuples))
        np.add.at(counts, flat_states, tuple_w[flat_rows])
        visited = np.flatnonzero(counts.sum(axis=1) > 0.0)
        counts = counts[visited]

        # one shared forward/backward pass over terminal and non-terminal inputs
        nt_inputs = clf.encode(visited, False, z_alpha)
        inputs = np.concatenate([term_inputs, nt_inputs], axis=0)
        logits, cache = net.forward_cached(inputs)
        t_logits = logits[:rows_total, :m]
        j_logits = logits[rows_total:, m:]

        ce_rows, ce_grad = softmax_cross_entropy(t_logits, base_of_row)
        loss_term = float(ce_rows.sum()) / batch

        j_logq = log_softmax(j_logits, axis=1)
        loss_joint = float(-(counts * j_logq).sum()) / batch
        j_grad = (counts.sum(axis=1, keepdims=True) * np.exp(j_logq) - counts) / batch

        gamma = min(1.0, step / warmup_steps)
        upstream = np.zeros_like(logits)
        upstream[:rows_total, :m] = ce_grad / batch
        upstream[rows_total:, m:] = gamma * j_grad
        grads, _ = net.backprop(cache, upstream)
        adam_step(net.params, grads, opt)
        ema_update(shadow, net.params)

        record = {
            "step": step,
            "loss_terminal": loss_term,
            "loss_nonterminal": loss_joint,
            "gamma": gamma,
        }
        if eval_fn is not None and config.eval_every and (
            step % config.eval_every == 0 or step == config.steps - 1
        ):
            record.update(eval_fn(clf, step))
        history.append(record)

    return TrainClassifierResult(clf, history)
