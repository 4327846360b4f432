"""Learned time-conditioned classifier for diffusion composition.

One MLP answers both classifier queries the composed reverse SDE needs: a
terminal head giving the posterior over source bases at t=0, and a joint head
over full label tuples at positive noise levels. Training follows the same
bootstrap as the grid classifier: trajectories are rolled out from each
base's reverse SDE, the terminal head learns which base produced each clean
sample, and the joint head is distilled at intermediate states using label
completions weighted by an EMA target copy of the terminal head. The joint
term is switched on only after a terminal-only warmup phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

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
from .sde import DiffusedMixture, VeSde, _batch, _shared_sde


class TimeClassifier:
    """MLP over (x, sinusoidal time features) with terminal and joint heads."""

    def __init__(
        self,
        sde: VeSde,
        dim: int,
        m: int,
        n: int,
        hidden: tuple[int, ...] = (256, 256),
        activation: str = "tanh",
        n_time_features: int = 64,
        rng: np.random.Generator | None = None,
    ) -> None:
        if n_time_features % 2 != 0:
            raise ValueError("n_time_features must be even (sin/cos pairs)")
        self.sde = sde
        self.dim = int(dim)
        self.m = int(m)
        self.n = int(n)
        self.n_time_features = int(n_time_features)
        half = n_time_features // 2
        self._freqs = np.exp(np.linspace(math.log(1.0), math.log(1000.0), half))
        in_dim = dim + n_time_features
        out_dim = self.m + self.m**self.n
        self.net = Mlp([in_dim, *hidden, out_dim], activation, rng or np.random.default_rng(0))

    def encode(self, x: np.ndarray, t) -> np.ndarray:
        xb = _batch(x, self.dim)
        times = np.broadcast_to(np.asarray(t, dtype=np.float64), (xb.shape[0],))
        angles = times[:, None] * self._freqs[None, :] / self.sde.t_max
        return np.concatenate([xb, np.sin(angles), np.cos(angles)], axis=1)

    def terminal_log_marginals(self, x) -> np.ndarray:
        """log q(y = i | x_0) from the terminal head."""
        logits = self.net.forward(self.encode(x, 0.0))[:, : self.m]
        return log_softmax(logits, axis=1)

    def _validate(self, observations) -> tuple[int, ...]:
        obs = tuple(int(y) for y in observations)
        if not obs or any(y < 1 or y > self.m for y in obs):
            raise ValueError(f"labels must lie in 1..{self.m}, got {obs}")
        if len(obs) > self.n:
            raise ValueError(
                f"classifier was trained for at most {self.n} observations, got {len(obs)}"
            )
        return obs

    def _marginal_mask(self, obs: tuple[int, ...]) -> np.ndarray:
        """Boolean mask over full tuples whose leading slots equal obs."""
        mask = np.zeros((self.m,) * self.n, dtype=bool)
        index = tuple(y - 1 for y in obs) + (slice(None),) * (self.n - len(obs))
        mask[index] = True
        return mask.reshape(-1)

    def log_joint(self, observations, t: float, x) -> np.ndarray:
        """log Q(obs | x_t); the joint head for t > 0, head product at t = 0."""
        obs = self._validate(observations)
        if t == 0.0:
            logq = self.terminal_log_marginals(x)
            return sum(logq[:, y - 1] for y in obs)
        logits = self.net.forward(self.encode(x, t))[:, self.m :]
        table = log_softmax(logits, axis=1)
        return logsumexp(table[:, self._marginal_mask(obs)], axis=1)

    def grad_log_joint(self, observations, t: float, x) -> np.ndarray:
        """d/dx of log Q(obs | x_t), by backpropagation through the input."""
        obs = self._validate(observations)
        xb = _batch(x, self.dim)
        logits, cache = self.net.forward_cached(self.encode(xb, t))
        upstream = np.zeros_like(logits)
        if t == 0.0:
            q = np.exp(log_softmax(logits[:, : self.m], axis=1))
            counts = np.bincount([y - 1 for y in obs], minlength=self.m)
            upstream[:, : self.m] = counts[None, :] - len(obs) * q
        else:
            joint = log_softmax(logits[:, self.m :], axis=1)
            probs = np.exp(joint)
            mask = self._marginal_mask(obs)
            inside = probs * mask
            conditional = inside / inside.sum(axis=1, keepdims=True)
            upstream[:, self.m :] = conditional - probs
        _, input_grad = self.net.backprop(cache, upstream)
        return input_grad[:, : self.dim]


def save_time_classifier(path: str, classifier: TimeClassifier, step: int = 0) -> None:
    save_mlp(
        path,
        classifier.net,
        step=step,
        extra={
            "role": "time_classifier",
            "dim": classifier.dim,
            "m": classifier.m,
            "n": classifier.n,
            "n_time_features": classifier.n_time_features,
            "sde": {
                "sigma_min": classifier.sde.sigma_min,
                "sigma_max": classifier.sde.sigma_max,
                "t_max": classifier.sde.t_max,
            },
        },
    )


def load_time_classifier(path: str) -> TimeClassifier:
    net, header = load_mlp(path)
    if header.get("role") != "time_classifier":
        raise ValueError(f"{path} does not hold a time classifier checkpoint")
    sde = VeSde(**header["sde"])
    clf = TimeClassifier(
        sde,
        int(header["dim"]),
        int(header["m"]),
        int(header["n"]),
        hidden=tuple(net.sizes[1:-1]),
        activation=net.activation,
        n_time_features=int(header["n_time_features"]),
    )
    clf.net = net
    return clf


@dataclass
class TimeClassifierTrainConfig:
    steps: int = 8000
    batch_per_base: int = 64
    lr: float = 0.001
    ema_beta: float = 0.995
    warmup_frac: float = 0.2
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "tanh"
    n_time_features: int = 64
    traj_per_base: int = 2048
    traj_steps: int = 256
    mc_threshold: int = 64
    mc_samples: int = 16
    seed: int = 0
    eval_every: int = 0


@dataclass
class TrainTimeClassifierResult:
    classifier: TimeClassifier
    history: list[dict] = field(repr=False)


def _rollout_buffer(
    dm: DiffusedMixture, count: int, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """(count, steps+1, d) reverse-SDE states; index k holds x at t = T - k dt."""
    sde = dm.sde
    dt = sde.t_max / steps
    x = dm.marginal(sde.t_max).sample(count, rng)
    out = np.empty((count, steps + 1, x.shape[1]))
    out[:, 0] = x
    for k in range(steps):
        t = sde.t_max - k * dt
        g2 = sde.g2(t)
        score = dm.marginal(t).score(x)
        x = x + g2 * score * dt + math.sqrt(g2 * dt) * rng.standard_normal(x.shape)
        out[:, k + 1] = x
    return out


def train_time_classifier(
    dms: list[DiffusedMixture],
    n: int,
    config: TimeClassifierTrainConfig,
    eval_fn: Callable[[TimeClassifier, int], dict] | None = None,
) -> TrainTimeClassifierResult:
    """Fit a TimeClassifier from reverse-SDE rollouts of the bases."""
    m = len(dms)
    if m < 2:
        raise ValueError("need at least two bases")
    sde = _shared_sde(dms)
    dim = dms[0].dim
    rng = np.random.default_rng(config.seed)
    clf = TimeClassifier(
        sde,
        dim,
        m,
        n,
        hidden=config.hidden,
        activation=config.activation,
        n_time_features=config.n_time_features,
        rng=rng,
    )
    net = clf.net
    opt = AdamState.for_params(net.params, lr=config.lr)
    shadow = EmaShadow.of(net.params, config.ema_beta)
    target_net = net.copy()
    target_net.params = shadow.shadow  # ema_update mutates in place; keep them aliased

    buffers = [
        _rollout_buffer(dm, config.traj_per_base, config.traj_steps, rng) for dm in dms
    ]
    times = sde.t_max - np.arange(config.traj_steps + 1) * (sde.t_max / config.traj_steps)
    batch = config.batch_per_base
    rows_total = m * batch
    n_tuples = m**n
    comp_size = m ** (n - 1)
    enumerate_completions = comp_size <= config.mc_threshold
    warmup_steps = max(1, int(round(config.warmup_frac * config.steps)))
    base_of_row = np.repeat(np.arange(m), batch)
    history: list[dict] = []

    for step in range(config.steps):
        term_x = np.empty((rows_total, dim))
        joint_x = np.empty((rows_total, dim))
        joint_t = np.empty(rows_total)
        joint_x0 = np.empty((rows_total, dim))
        for i in range(m):
            block = slice(i * batch, (i + 1) * batch)
            term_pick = rng.integers(0, config.traj_per_base, size=batch)
            term_x[block] = buffers[i][term_pick, -1]
            joint_pick = rng.integers(0, config.traj_per_base, size=batch)
            k = rng.integers(0, config.traj_steps, size=batch)  # times strictly > 0
            joint_x[block] = buffers[i][joint_pick, k]
            joint_t[block] = times[k]
            joint_x0[block] = buffers[i][joint_pick, -1]

        # tuple weights from the EMA target's terminal head at each x_0
        q_target = softmax(target_net.forward(clf.encode(joint_x0, 0.0))[:, :m], axis=1)
        tuple_w = np.zeros((rows_total, n_tuples))
        if n == 1:
            tuple_w[np.arange(rows_total), base_of_row] = 1.0
        elif enumerate_completions:
            grids = np.meshgrid(*([np.arange(m)] * (n - 1)), indexing="ij")
            comp = np.stack([g.ravel() for g in grids], axis=0)
            comp_w = np.ones((rows_total, comp_size))
            for k_slot in range(n - 1):
                comp_w *= q_target[:, comp[k_slot]]
            for i in range(m):
                block = slice(i * batch, (i + 1) * batch)
                tuple_w[block, i * comp_size : (i + 1) * comp_size] = comp_w[block]
        else:
            cum = np.cumsum(q_target, axis=1)
            draws = rng.random((rows_total, config.mc_samples, n - 1))
            labels = (draws[..., None] > cum[:, None, None, :]).sum(axis=-1)
            labels = np.minimum(labels, m - 1)
            tids = base_of_row[:, None] * comp_size
            for k_slot in range(n - 1):
                tids = tids + labels[:, :, k_slot] * m ** (n - 2 - k_slot)
            row_idx = np.broadcast_to(np.arange(rows_total)[:, None], tids.shape)
            np.add.at(tuple_w, (row_idx.ravel(), tids.ravel()), 1.0 / config.mc_samples)

        inputs = np.concatenate(
            [clf.encode(term_x, 0.0), clf.encode(joint_x, joint_t)], axis=0
        )
        logits, cache = net.forward_cached(inputs)
        t_logits = logits[:rows_total, :m]
        j_logits = logits[rows_total:, m:]

        ce_rows, ce_grad = softmax_cross_entropy(t_logits, base_of_row)
        loss_term = float(ce_rows.sum()) / batch
        j_logq = log_softmax(j_logits, axis=1)
        loss_joint = float(-(tuple_w * j_logq).sum()) / batch
        j_grad = (np.exp(j_logq) - tuple_w) / batch  # tuple weights sum to 1 per row

        gamma = 0.0 if step < warmup_steps else 1.0
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

    return TrainTimeClassifierResult(clf, history)
