"""The grid generation DAG and forward policies over it.

States are the cells of an H-by-H grid plus one distinct terminal copy per
cell. A trajectory starts at the upper-left cell (0,0), repeatedly moves down
or right, and ends the moment the stop action fires, landing in the current
cell's terminal copy. Cells are indexed row-major (s = r*H + c), which is a
topological order: every move strictly increases the index, so exact
enumeration is a single forward sweep.

Action indices are fixed as 0=down, 1=right, 2=stop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroObservationProbability
from .nn import Mlp, log_softmax
from .tables import DensityTable

ACTION_DOWN, ACTION_RIGHT, ACTION_STOP = 0, 1, 2
N_ACTIONS = 3


@dataclass(frozen=True)
class GridDag:
    """Geometry and masks of the H x H grid DAG."""

    height: int

    def __post_init__(self) -> None:
        if self.height < 1:
            raise ValueError("grid height must be at least 1")

    @property
    def n_cells(self) -> int:
        return self.height * self.height

    def cell_of(self, state: int) -> tuple[int, int]:
        return divmod(int(state), self.height)

    def legal_mask(self) -> np.ndarray:
        """(H^2, 3) boolean mask of legal actions per non-terminal state."""
        h = self.height
        rows, cols = np.divmod(np.arange(self.n_cells), h)
        mask = np.ones((self.n_cells, N_ACTIONS), dtype=bool)
        mask[:, ACTION_DOWN] = rows < h - 1
        mask[:, ACTION_RIGHT] = cols < h - 1
        return mask

    def parent_counts(self) -> np.ndarray:
        """Number of DAG parents of each non-terminal cell (0 for the start)."""
        h = self.height
        rows, cols = np.divmod(np.arange(self.n_cells), h)
        return (rows > 0).astype(np.int64) + (cols > 0).astype(np.int64)

    def one_hot_states(self) -> np.ndarray:
        """(H^2, 2H) one-hot row/column encoding of every cell."""
        h = self.height
        rows, cols = np.divmod(np.arange(self.n_cells), h)
        enc = np.zeros((self.n_cells, 2 * h), dtype=np.float64)
        enc[np.arange(self.n_cells), rows] = 1.0
        enc[np.arange(self.n_cells), h + cols] = 1.0
        return enc


def build_grid_dag(height: int) -> GridDag:
    return GridDag(int(height))


@dataclass(frozen=True)
class Trajectory:
    """A complete rollout: visited non-terminal states, actions, terminal cell."""

    states: np.ndarray  # non-terminal state indices in visit order
    actions: np.ndarray  # chosen action per visited state
    terminal_cell: int

    def __post_init__(self) -> None:
        if self.actions[-1] != ACTION_STOP or self.terminal_cell != self.states[-1]:
            raise ValueError("a trajectory must end by stopping in its last state")

    @property
    def length(self) -> int:
        return int(self.states.shape[0]) + 1  # including the terminal copy


def masked_action_probs(logits: np.ndarray, legal: np.ndarray) -> np.ndarray:
    """Softmax over legal actions only; illegal entries come out exactly 0."""
    shaped = np.where(legal, logits, -np.inf)
    with np.errstate(invalid="ignore"):
        probs = np.exp(log_softmax(shaped, axis=-1))
    return np.where(legal, probs, 0.0)


@dataclass
class ForwardPolicy:
    """A frozen per-state action distribution on the grid DAG.

    `probs` has one row per non-terminal state; rows sum to 1 over legal
    actions. `dead` marks states at which the policy is undefined (possible
    for observation-guided policies when the observation has zero probability
    from that state); dead states are unreachable from any live state, and
    sampling from one raises ZeroObservationProbability.
    """

    dag: GridDag
    probs: np.ndarray
    dead: np.ndarray | None = None
    backing: dict | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        expected = (self.dag.n_cells, N_ACTIONS)
        if self.probs.shape != expected:
            raise ValueError(f"probs must be {expected}, got {self.probs.shape}")

    @classmethod
    def from_logits(cls, dag: GridDag, logits: np.ndarray) -> "ForwardPolicy":
        probs = masked_action_probs(logits, dag.legal_mask())
        return cls(dag, probs, backing={"kind": "tabular", "logits": np.asarray(logits, float)})

    @classmethod
    def from_mlp(cls, dag: GridDag, net: Mlp) -> "ForwardPolicy":
        logits = net.forward(dag.one_hot_states())
        probs = masked_action_probs(logits, dag.legal_mask())
        return cls(dag, probs, backing={"kind": "mlp", "net": net})

    @classmethod
    def uniform(cls, dag: GridDag) -> "ForwardPolicy":
        return cls.from_logits(dag, np.zeros((dag.n_cells, N_ACTIONS)))

    def action_probs(self, state: int) -> np.ndarray:
        if self.dead is not None and self.dead[state]:
            raise ZeroObservationProbability(
                f"policy undefined at state {state}: observations have zero probability"
            )
        return self.probs[state]

    def child(self, state: int, action: int) -> int:
        """Successor state index; stop returns the same cell (its terminal copy)."""
        if action == ACTION_DOWN:
            return state + self.dag.height
        if action == ACTION_RIGHT:
            return state + 1
        return state


def sample_trajectory(policy: ForwardPolicy, rng: np.random.Generator) -> Trajectory:
    """Roll out one trajectory from the start cell."""
    states: list[int] = []
    actions: list[int] = []
    state = 0
    while True:
        p = policy.action_probs(state)
        action = int(rng.choice(N_ACTIONS, p=p))
        states.append(state)
        actions.append(action)
        if action == ACTION_STOP:
            return Trajectory(np.array(states), np.array(actions), state)
        state = policy.child(state, action)


def sample_trajectory_batch(
    probs: np.ndarray, dag: GridDag, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized rollout of `count` trajectories from a probability table.

    Returns (states, actions, lengths, terminal_cells) where states/actions are
    (count, 2H-1) arrays padded with -1 past each trajectory's length. Actions
    are drawn by Gumbel-max over log probabilities, so zero-probability actions
    are never selected.
    """
    max_len = 2 * dag.height - 1
    states = np.full((count, max_len), -1, dtype=np.int64)
    actions = np.full((count, max_len), -1, dtype=np.int64)
    lengths = np.zeros(count, dtype=np.int64)
    terminal = np.full(count, -1, dtype=np.int64)
    with np.errstate(divide="ignore"):
        log_probs = np.log(probs)
    cur = np.zeros(count, dtype=np.int64)
    alive = np.ones(count, dtype=bool)
    for t in range(max_len):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        gumbel = -np.log(-np.log(rng.random((idx.size, N_ACTIONS))))
        act = np.argmax(log_probs[cur[idx]] + gumbel, axis=1)
        states[idx, t] = cur[idx]
        actions[idx, t] = act
        lengths[idx] += 1
        stopped = act == ACTION_STOP
        terminal[idx[stopped]] = cur[idx[stopped]]
        alive[idx[stopped]] = False
        moving = idx[~stopped]
        cur[moving] += np.where(act[~stopped] == ACTION_DOWN, dag.height, 1)
    return states, actions, lengths, terminal


def enumerate_distribution(policy: ForwardPolicy) -> DensityTable:
    """Exact terminal distribution by a forward sweep in topological order."""
    h = policy.dag.height
    _, mass = visit_probabilities(policy)
    mass = mass.reshape(h, h)
    return DensityTable((h, h), mass / mass.sum(), mass > 0.0)


def visit_probabilities(policy: ForwardPolicy) -> tuple[np.ndarray, np.ndarray]:
    """(non-terminal visit probabilities, terminal cell masses) under a policy."""
    h = policy.dag.height
    visit = np.zeros(policy.dag.n_cells, dtype=np.float64)
    visit[0] = 1.0
    mass = np.zeros(policy.dag.n_cells, dtype=np.float64)
    probs = policy.probs
    for s in range(policy.dag.n_cells):
        u = visit[s]
        if u == 0.0:
            continue
        mass[s] += u * probs[s, ACTION_STOP]
        r, c = divmod(s, h)
        if r < h - 1:
            visit[s + h] += u * probs[s, ACTION_DOWN]
        if c < h - 1:
            visit[s + 1] += u * probs[s, ACTION_RIGHT]
    return visit, mass


@dataclass(frozen=True)
class RewardField:
    """Strictly positive reward per terminal cell."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"reward field must be square, got shape {v.shape}")
        if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
            raise ValueError("rewards must be strictly positive and finite")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    def target_distribution(self, beta: float = 1.0) -> DensityTable:
        """The distribution R(x)^beta / Z a perfectly trained sampler realizes."""
        raw = self.values ** float(beta)
        return DensityTable.from_unnormalized(raw)


def bump_reward(
    height: int,
    centers: list[tuple[float, float]],
    sigmas: list[float] | float,
    floor: float = 0.01,
) -> RewardField:
    """Sum-of-Gaussian-bumps reward with a positive floor.

    R(r,c) = floor + sum_b exp(-((r,c)-center_b)^2 / (2 sigma_b^2)).
    """
    if np.isscalar(sigmas):
        sigmas = [float(sigmas)] * len(centers)
    rows, cols = np.meshgrid(np.arange(height), np.arange(height), indexing="ij")
    values = np.full((height, height), float(floor))
    for (cr, cc), sig in zip(centers, sigmas):
        d2 = (rows - cr) ** 2 + (cols - cc) ** 2
        values = values + np.exp(-d2 / (2.0 * float(sig) ** 2))
    return RewardField(values)
