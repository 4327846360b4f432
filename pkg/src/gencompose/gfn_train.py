"""Trajectory-balance training of grid forward policies.

The sampler is trained so that terminal states are visited with probability
proportional to R(x)^beta. The objective per trajectory is

    delta = log Z + sum_t log P_F(a_t | s_t) - beta log R(x) - sum log P_B,

minimized as delta^2, with a uniform backward policy over DAG parents. log Z
gets its own (much larger) learning rate, following common practice for this
estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteDetected
from .grid import (
    ACTION_STOP,
    N_ACTIONS,
    ForwardPolicy,
    GridDag,
    RewardField,
    enumerate_distribution,
    sample_trajectory_batch,
)
from .nn import AdamState, Mlp, adam_step, backward as net_backward, log_softmax
from .tables import l1_distance


@dataclass
class TrainBaseConfig:
    kind: str = "mlp"  # "tabular" or "mlp"
    steps: int = 20000
    batch_size: int = 16
    lr: float = 0.001
    logz_lr: float = 0.1
    explore_eps: float = 0.05
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "tanh"
    seed: int = 0
    eval_every: int = 0  # 0 disables periodic L1 evaluation

    def __post_init__(self) -> None:
        if self.kind not in ("tabular", "mlp"):
            raise ValueError(f"unknown policy kind {self.kind!r}")


@dataclass
class TrainBaseResult:
    policy: ForwardPolicy
    log_z: float
    history: list[dict] = field(repr=False)


def _policy_logits(kind: str, params, one_hots: np.ndarray, net: Mlp | None) -> np.ndarray:
    if kind == "tabular":
        return params[0]
    return net.forward(one_hots)


def train_base(reward: RewardField, beta: float, config: TrainBaseConfig) -> TrainBaseResult:
    """Train one forward policy against a reward field at inverse temperature beta."""
    dag = GridDag(reward.height)
    rng = np.random.default_rng(config.seed)
    legal = dag.legal_mask()
    parent_counts = dag.parent_counts()
    log_parents = np.zeros(dag.n_cells)
    np.log(parent_counts, out=log_parents, where=parent_counts > 0)
    log_reward = float(beta) * np.log(reward.values).ravel()
    target = reward.target_distribution(beta) if config.eval_every else None

    one_hots = dag.one_hot_states()
    if config.kind == "tabular":
        net = None
        params = [np.zeros((dag.n_cells, N_ACTIONS))]
    else:
        net = Mlp([2 * dag.height, *config.hidden, N_ACTIONS], config.activation, rng)
        params = net.params
    opt = AdamState.for_params(params, lr=config.lr)
    log_z = np.array([0.0])
    opt_z = AdamState.for_params([log_z], lr=config.logz_lr)
    uniform_legal = legal / legal.sum(axis=1, keepdims=True)
    history: list[dict] = []

    for step in range(config.steps):
        logits = _policy_logits(config.kind, params, one_hots, net)
        shaped = np.where(legal, logits, -np.inf)
        log_probs = log_softmax(shaped, axis=1)
        probs = np.where(legal, np.exp(log_probs), 0.0)
        behavior = (1.0 - config.explore_eps) * probs + config.explore_eps * uniform_legal

        states, actions, lengths, terminal = sample_trajectory_batch(
            behavior, dag, rng, config.batch_size
        )
        flat_mask = states >= 0
        flat_states = states[flat_mask]
        flat_actions = actions[flat_mask]
        traj_of = np.broadcast_to(
            np.arange(config.batch_size)[:, None], states.shape
        )[flat_mask]

        step_logp = log_probs[flat_states, flat_actions]
        sum_logp = np.bincount(traj_of, weights=step_logp, minlength=config.batch_size)
        # Every visited state after the start was entered by exactly one move,
        # so the backward log-probability telescopes to a sum over those states.
        enter_mask = flat_actions != ACTION_STOP
        entered = flat_states[enter_mask] + np.where(
            flat_actions[enter_mask] == 0, dag.height, 1
        )
        sum_logb = -np.bincount(
            traj_of[enter_mask], weights=log_parents[entered], minlength=config.batch_size
        )
        delta = log_z[0] + sum_logp - log_reward[terminal] - sum_logb
        if not np.all(np.isfinite(delta)):
            raise NonFiniteDetected(f"non-finite balance residual at step {step}")
        loss = float(np.mean(delta**2))

        # d loss / d logit(s, a) accumulated over all visited (state, action)
        # pairs: coefficient * (one-hot of the taken action - softmax row).
        coeff = 2.0 * delta / config.batch_size
        per_visit = coeff[traj_of]
        state_coeff = np.bincount(flat_states, weights=per_visit, minlength=dag.n_cells)
        taken = np.bincount(
            flat_states * N_ACTIONS + flat_actions,
            weights=per_visit,
            minlength=dag.n_cells * N_ACTIONS,
        ).reshape(dag.n_cells, N_ACTIONS)
        grad_logits = np.where(legal, taken, 0.0) - state_coeff[:, None] * probs

        if config.kind == "tabular":
            adam_step(params, [grad_logits], opt)
        else:
            rows = np.unique(flat_states)
            grads = net_backward(net, one_hots[rows], grad_logits[rows])
            adam_step(params, grads, opt)
        adam_step([log_z], [np.array([float(np.mean(2.0 * delta))])], opt_z)

        record = {"step": step, "loss": loss, "log_z": float(log_z[0])}
        if config.eval_every and (step % config.eval_every == 0 or step == config.steps - 1):
            current = ForwardPolicy(dag, probs)
            record["l1_to_target"] = l1_distance(enumerate_distribution(current), target)
        history.append(record)

    final_logits = _policy_logits(config.kind, params, one_hots, net)
    if config.kind == "tabular":
        policy = ForwardPolicy.from_logits(dag, final_logits)
    else:
        policy = ForwardPolicy.from_mlp(dag, net)
    return TrainBaseResult(policy, float(log_z[0]), history)
