"""
DQN agent in plain numpy: MLP Q-network with hand-written backprop,
ring replay buffer, target network and epsilon-greedy exploration.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    batch_size: int = 32
    learning_rate: float = 1e-3
    grad_clip: float = 10.0
    optimizer: str = "sgd"
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.6
    target_sync: int = 50
    replay_capacity: int = 10_000
    hidden: Tuple[int, ...] = (64, 64)
    episodes: int = 1
    updates_per_epoch: int = 1
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("eps_start", "eps_end", "eps_decay_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.target_sync < 1 or self.replay_capacity < 1 or self.episodes < 1:
            raise ValueError("target_sync, replay_capacity and episodes must be >= 1")
        if self.updates_per_epoch < 0:
            raise ValueError("updates_per_epoch must be >= 0")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be > 0")

    def epsilon(self, step: int, total_steps: int) -> float:
        """Linear decay from ``eps_start`` to ``eps_end`` over the first fraction of training."""
        horizon = self.eps_decay_fraction * total_steps
        if horizon <= 0:
            return self.eps_end
        frac = min(1.0, step / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


class QNetwork:
    """Fully connected ReLU network with a linear head."""

    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        self.sizes = tuple(int(s) for s in sizes)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)  # He-uniform for ReLU
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy_from(self, other: "QNetwork") -> None:
        if other.sizes != self.sizes:
            raise ValueError(f"shape mismatch {other.sizes} vs {self.sizes}")
        for p, q in zip(self.params, other.params):
            p[...] = q

    def clone(self) -> "QNetwork":
        net = QNetwork.__new__(QNetwork)
        net.sizes = self.sizes
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"state has {x.shape[-1]} features, network expects {self.sizes[0]}")
        return x

    def forward(self, x) -> np.ndarray:
        """Q-values for one state (1-D) or a batch (2-D)."""
        x = self._check(x)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def loss_and_grads(self, states, actions, targets) -> Tuple[float, List[np.ndarray]]:
        """MSE ``mean((y - q(s, a))^2)`` and its gradient w.r.t. ``params``."""
        x = self._check(states)
        actions = np.asarray(actions, dtype=int)
        targets = np.asarray(targets, dtype=float)
        B = x.shape[0]
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < last else z
            acts.append(h)
        q = acts[-1]
        err = targets - q[np.arange(B), actions]
        loss = float(np.mean(err**2))
        dq = np.zeros_like(q)
        dq[np.arange(B), actions] = -2.0 * err / B
        grads: List[np.ndarray] = []
        delta = dq
        for i in range(last, -1, -1):
            dw = acts[i].T @ delta
            db = delta.sum(axis=0)
            grads = [dw, db] + grads
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre[i - 1] > 0)
        return loss, grads

    def state_dict(self) -> dict:
        return {f"p{i}": p for i, p in enumerate(self.params)}


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    @property
    def size(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity ring; the oldest transition is overwritten first."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def store(self, t: Transition) -> None:
        if not np.isfinite(t.reward):
            raise ValueError(f"non-finite reward {t.reward}")
        i = self._next
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.terminals[i] = t.terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_index(self) -> int:
        return self._next if self.size == self.capacity else 0

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(
            self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.terminals[idx]
        )


def select_action(qvals, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    q = np.asarray(qvals)
    if rng.random() < epsilon:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def td_targets(target_net: QNetwork, batch: Batch, gamma: float) -> np.ndarray:
    nxt = target_net.forward(batch.next_states).max(axis=1)
    return batch.rewards + gamma * np.where(batch.terminals, 0.0, nxt)


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grads(grads: List[np.ndarray], max_norm: float) -> List[np.ndarray]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


def train_step(net: QNetwork, target_net: QNetwork, batch: Optional[Batch], config: TrainConfig, optimizer=None):
    """One TD update on ``batch``.

    Returns:
        The loss before the update, or ``None`` when there was nothing to
        train on.
    """
    if batch is None or batch.size == 0:
        return None
    y = td_targets(target_net, batch, config.gamma)
    loss, grads = net.loss_and_grads(batch.states, batch.actions, y)
    grads = clip_grads(grads, config.grad_clip)
    if optimizer is None:
        for p, g in zip(net.params, grads):
            p -= config.learning_rate * g
    else:
        optimizer.step(net.params, grads)
    return loss


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    target_net.copy_from(net)


class DQNAgent:
    def __init__(self, state_dim: int, num_actions: int, config: TrainConfig, seed: Optional[int] = None):
        self.config = config
        init_rng, self.rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        self.net = QNetwork((state_dim, *config.hidden, num_actions), init_rng)
        self.target = self.net.clone()
        self.replay = ReplayBuffer(config.replay_capacity, state_dim)
        self.optimizer = _Adam(self.net.params, config.learning_rate) if config.optimizer == "adam" else None
        self.train_steps = 0
        self.syncs = 0

    @property
    def num_actions(self) -> int:
        return self.net.sizes[-1]

    def act(self, state, epsilon: float) -> int:
        return select_action(self.net.forward(state), epsilon, self.rng)

    def observe(self, transition: Transition) -> None:
        t = transition
        self.replay.store(t._replace(reward=t.reward / self.config.reward_scale))

    def learn(self) -> Optional[float]:
        """Run ``updates_per_epoch`` TD steps; returns the mean loss or None."""
        cfg = self.config
        losses = []
        for _ in range(cfg.updates_per_epoch):
            if len(self.replay) < cfg.batch_size:
                break
            batch = self.replay.sample(cfg.batch_size, self.rng)
            losses.append(train_step(self.net, self.target, batch, cfg, self.optimizer))
            self.train_steps += 1
            if self.train_steps % cfg.target_sync == 0:
                sync_target(self.net, self.target)
                self.syncs += 1
        return float(np.mean(losses)) if losses else None

    def save(self, path) -> None:
        meta = dict(version=CHECKPOINT_VERSION, sizes=list(self.net.sizes), train_steps=self.train_steps,
                    config=asdict(self.config))
        np.savez(path, meta=np.array(json.dumps(meta)), **self.net.state_dict())

    @classmethod
    def load(cls, path, seed: Optional[int] = None) -> "DQNAgent":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            cfg = meta["config"]
            cfg["hidden"] = tuple(cfg["hidden"])
            sizes = meta["sizes"]
            agent = cls(sizes[0], sizes[-1], TrainConfig(**cfg), seed)
            if tuple(sizes) != agent.net.sizes:
                raise ValueError(f"checkpoint layer sizes {sizes} do not match config")
            for i, p in enumerate(agent.net.params):
                p[...] = data[f"p{i}"]
        agent.target.copy_from(agent.net)
        agent.train_steps = meta["train_steps"]
        return agent
