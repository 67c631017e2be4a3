"""Deep Q-learning over a QNET indicator network.

The Q-network's graph parameters are row views into two dense matrices, so
the hot training loop runs through :mod:`tinlab.kernels` while the graph
stays the single source of truth for serialization and gradient checks.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .builders import IndicatorNetworkSpec, build
from .env import Action, EnvConfig, TradingEnv, run_policy
from .errors import ConfigurationError, DimensionError, UsageError
from .graph import dump_parameters, load_parameters


@dataclass(frozen=True)
class DqnConfig:
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 5000
    buffer_capacity: int = 10000
    batch_size: int = 32
    lr: float = 1e-3
    target_sync_every: int = 200
    episodes: int = 50
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must lie in [0, 1)")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.epsilon_end > self.epsilon_start:
            raise ConfigurationError("epsilon_end must not exceed epsilon_start")
        for name in ("epsilon_decay_steps", "buffer_capacity", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.batch_size > self.buffer_capacity:
            raise ConfigurationError("batch_size cannot exceed buffer_capacity")
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")
        if self.target_sync_every < 0 or self.episodes < 0:
            raise ConfigurationError("target_sync_every and episodes must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def epsilon_at(self, step):
        if step >= self.epsilon_decay_steps:
            return self.epsilon_end
        frac = step / self.epsilon_decay_steps
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


class QNetwork:
    """Dense view of a QNET: ``q = act(obs @ w1.T) @ w2.T``."""

    def __init__(self, net):
        if net.spec.kind != "QNET":
            raise ConfigurationError("QNetwork wraps QNET networks only")
        self.net = net
        self.w1, self.w2 = net.w1, net.w2
        self.relu = net.spec.activation == "relu"
        self.m = [np.zeros_like(self.w1), np.zeros_like(self.w2)]
        self.v = [np.zeros_like(self.w1), np.zeros_like(self.w2)]
        self.steps = 0
        params = list(net.graph.parameters().values())
        for p, m, v in zip(params, [*self.m[0], *self.m[1]],
                                [*self.v[0], *self.v[1]]):
            p.m1, p.m2 = m, v

    @classmethod
    def from_spec(cls, spec):
        return cls(build(spec))

    @property
    def spec(self):
        return self.net.spec

    @property
    def input_dim(self):
        return self.w1.shape[1]

    def q_values(self, obs):
        return kernels.qnet_forward(np.asarray(obs, dtype=np.float64)[None, :], self.w1, self.w2, self.relu)[2][0]

    def q_batch(self, obs):
        return kernels.qnet_forward(obs, self.w1, self.w2, self.relu)[2]

    def loss_and_grads(self, obs, actions, targets):
        return kernels.qnet_loss_grad(obs, actions, targets, self.w1, self.w2, self.relu)

    def apply_gradients(self, grads, cfg):
        self.steps += 1
        for p in self.net.graph.parameters().values():
            p.step_count += 1
        for w, g, m, v in zip((self.w1, self.w2), grads, self.m, self.v):
            if cfg.optimizer == "sgd":
                w -= cfg.lr * g
            else:
                kernels.adam_update(w, g, m, v, self.steps, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def clone(self):
        other = QNetwork.from_spec(self.spec)
        other.load_from(self)
        return other

    def load_from(self, other):
        self.w1[...] = other.w1
        self.w2[...] = other.w2

    def flat_parameters(self):
        return np.concatenate([self.w1.ravel(), self.w2.ravel()])

    def dumps(self):
        """Parameter file text: the spec document as comments, then the values."""
        head = "".join(f"#: {line}\n" for line in self.spec.dumps().splitlines())
        return head + dump_parameters(self.net.graph)

    @classmethod
    def loads(cls, text):
        spec_lines = [ln[3:] for ln in text.splitlines() if ln.startswith("#: ")]
        body = "\n".join(ln for ln in text.splitlines() if not ln.startswith("#: "))
        q = cls.from_spec(IndicatorNetworkSpec.loads("\n".join(spec_lines)))
        load_parameters(q.net.graph, body)
        q.net.trained = True
        return q


# ---------------------------------------------------------------------------
# replay


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise."""

    def __init__(self, capacity, obs_dim):
        if capacity < 1:
            raise ConfigurationError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.inserts = 0

    def __len__(self):
        return min(self.inserts, self.capacity)

    def push(self, obs, action, reward, next_obs, done):
        i = self.inserts % self.capacity
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = int(action)
        self.rewards[i] = reward
        self.dones[i] = done
        self.inserts += 1

    def _ordered(self):
        n = len(self)
        start = self.inserts - n
        return [(start + k) % self.capacity for k in range(n)]

    def items(self):
        from .env import Transition

        return [Transition(self.obs[i].copy(), Action(self.actions[i]), float(self.rewards[i]),
                           self.next_obs[i].copy(), bool(self.dones[i])) for i in self._ordered()]

    def take(self, idx):
        idx = np.asarray(idx)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx])

    def sample(self, rng, batch_size):
        """Uniform with replacement."""
        if len(self) == 0:
            raise UsageError("cannot sample from an empty buffer")
        return self.take(rng.integers(0, len(self), batch_size))


# ---------------------------------------------------------------------------
# agent operations


def select_action(qnet, obs, epsilon, rng):
    """Epsilon-greedy; greedy ties go to the lowest action code."""
    if not 0 <= epsilon <= 1:
        raise ConfigurationError(f"epsilon must lie in [0, 1], got {epsilon}")
    if len(obs) != qnet.input_dim:
        raise DimensionError(f"observation has {len(obs)} values, network expects {qnet.input_dim}")
    if epsilon > 0 and rng.random() < epsilon:
        return Action(int(rng.integers(0, len(Action))))
    return Action(int(np.argmax(qnet.q_values(obs))))


def td_targets(batch, gamma, target_qnet):
    if len(batch) == 0:
        raise UsageError("empty batch")
    best = target_qnet.q_batch(batch.next_obs).max(axis=1)
    return batch.rewards + gamma * np.where(batch.dones, 0.0, best)


def train_step(qnet, target_qnet, buffer, cfg, rng):
    """One minibatch regression step; returns the mean squared TD error."""
    if len(buffer) < cfg.batch_size:
        raise UsageError(f"buffer holds {len(buffer)} transitions, batch needs {cfg.batch_size}")
    batch = buffer.sample(rng, cfg.batch_size)
    y = td_targets(batch, cfg.gamma, target_qnet if target_qnet is not None else qnet)
    loss, g1, g2 = qnet.loss_and_grads(batch.obs, batch.actions, y)
    qnet.apply_gradients((g1, g2), cfg)
    return loss


@dataclass
class TrainLog:
    total_reward: list = field(default_factory=list)
    mean_loss: list = field(default_factory=list)
    epsilon: list = field(default_factory=list)
    trade_count: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)

    def __len__(self):
        return len(self.total_reward)

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["episode", "total_reward", "mean_loss", "epsilon", "trade_count"])
        for i in range(len(self)):
            loss = self.mean_loss[i]
            w.writerow([i, repr(self.total_reward[i]), "" if loss is None else repr(loss),
                        repr(self.epsilon[i]), self.trade_count[i]])
        return out.getvalue()

    def timing_csv(self):
        return "episode,seconds\n" + "".join(f"{i},{s:.6f}\n" for i, s in enumerate(self.wall_clock))


def qnet_spec_for(fm, env_cfg, hidden=26, init="ReplicateEMA", activation="identity", seed=0):
    return IndicatorNetworkSpec("QNET", feature_dim=fm.width, init=init, input_len=env_cfg.window_len,
                                hidden=hidden, activation=activation, seed=seed, channels=fm.channels)


def train(fm, env_cfg, dqn_cfg, qnet_spec):
    """Train a fresh Q-network on one symbol; returns ``(QNetwork, TrainLog)``."""
    if qnet_spec.input_len != env_cfg.window_len or qnet_spec.feature_dim != fm.width:
        raise ConfigurationError(
            f"network expects {qnet_spec.feature_dim}x{qnet_spec.input_len} inputs, "
            f"environment gives {fm.width}x{env_cfg.window_len}")
    rng = np.random.default_rng(dqn_cfg.seed)
    qnet = QNetwork.from_spec(qnet_spec)
    target = qnet.clone() if dqn_cfg.target_sync_every else None
    env = TradingEnv(fm, env_cfg)
    buffer = ReplayBuffer(dqn_cfg.buffer_capacity, env.obs_dim)
    log = TrainLog()
    step = 0
    for _ in range(dqn_cfg.episodes):
        tic = time.perf_counter()
        obs, done = env.reset(), False
        total, losses, trades = 0.0, [], 0
        while not done:
            eps = dqn_cfg.epsilon_at(step)
            a = select_action(qnet, obs, eps, rng)
            nobs, r, done = env.step(a)
            buffer.push(obs, a, r, nobs, done)
            if len(buffer) >= dqn_cfg.batch_size:
                losses.append(train_step(qnet, target, buffer, dqn_cfg, rng))
            step += 1
            if target is not None and step % dqn_cfg.target_sync_every == 0:
                target.load_from(qnet)
            obs = nobs
            total += r
            trades += env.traded
        log.total_reward.append(total)
        log.mean_loss.append(float(np.mean(losses)) if losses else None)
        log.epsilon.append(dqn_cfg.epsilon_at(step))
        log.trade_count.append(trades)
        log.wall_clock.append(time.perf_counter() - tic)
    qnet.net.trained = dqn_cfg.episodes > 0
    return qnet, log


def greedy_policy(qnet):
    return lambda obs: Action(int(np.argmax(qnet.q_values(obs))))


def evaluate(qnet, fm, env_cfg):
    return run_policy(fm, env_cfg, greedy_policy(qnet))
