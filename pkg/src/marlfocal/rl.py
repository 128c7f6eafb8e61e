"""Trajectories, discounted returns and the two policy-gradient update rules."""
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import policy as pn

REINFORCE = "reinforce"
PPO = "ppo"


@dataclass
class Step:
    state: np.ndarray
    action: object
    log_prob_old: float
    reward: float


@dataclass
class Trajectory:
    gamma: float = 0.8
    steps: list = field(default_factory=list)
    frozen: bool = False

    def append(self, state, action, log_prob_old, reward):
        if self.frozen:
            raise RuntimeError("trajectory is frozen")
        self.steps.append(Step(np.asarray(state, dtype=np.float64), action, float(log_prob_old), float(reward)))

    def freeze(self):
        self.frozen = True
        return self

    def __len__(self):
        return len(self.steps)

    @property
    def rewards(self):
        return np.array([s.reward for s in self.steps])


@dataclass
class UpdateConfig:
    algorithm: str = REINFORCE
    lr: float = 0.001
    clip_eps: float = 0.02
    ppo_epochs: int = 4
    baseline: str = "running-mean"
    returns: str = "to-go"  # or "total": every step is credited with R(tau)

    def __post_init__(self):
        if self.algorithm not in (REINFORCE, PPO):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == PPO and self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive for PPO")
        if self.baseline not in ("none", "running-mean"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.returns not in ("to-go", "total"):
            raise ValueError(f"unknown returns mode {self.returns!r}")


def discounted_returns(traj):
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    rewards = traj.rewards
    out = np.empty_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + traj.gamma * running
        out[t] = running
    return out


class RunningBaseline:
    """Mean of the last ``window`` per-update mean returns, current batch included."""

    def __init__(self, window=100):
        self.values = deque(maxlen=window)

    def __call__(self, returns):
        self.values.append(float(np.mean(returns)))
        return float(np.mean(self.values))

    def state(self):
        return list(self.values)

    def restore(self, values):
        self.values.clear()
        self.values.extend(values)


def _returns(traj, cfg):
    g = discounted_returns(traj)
    if cfg.returns == "total":
        g = np.full_like(g, g[0])
    return g


def advantages(traj, cfg, baseline=None):
    g = _returns(traj, cfg)
    if cfg.baseline == "running-mean" and baseline is not None:
        return g - baseline(g)
    return g


def _batch(traj):
    states = np.stack([s.state for s in traj.steps])
    actions = np.array([np.asarray(s.action, dtype=np.float64) if np.ndim(s.action) else s.action
                        for s in traj.steps])
    return states, actions


def policy_gradient(params, traj, adv):
    """sum_t adv_t * grad log pi(a_t | s_t) at the current parameters."""
    states, actions = _batch(traj)
    fwd = pn.forward_batch(params, states)
    return pn.backward_batch(params, fwd, actions, adv)


def reinforce_update(params, traj, cfg, baseline=None):
    """One ascent step along sum_t grad log pi(a_t|s_t) * (G_t - b)."""
    traj.freeze()
    adv = advantages(traj, cfg, baseline)
    grads = policy_gradient(params, traj, adv)
    return pn.apply_update(params, grads, cfg.lr)


def _ratios(params, traj):
    states, actions = _batch(traj)
    fwd = pn.forward_batch(params, states)
    old = np.array([s.log_prob_old for s in traj.steps])
    return fwd, actions, np.exp(pn.log_prob_batch(fwd, actions) - old)


def ppo_objective(params, traj, adv, eps):
    """Clipped surrogate sum_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t)."""
    _, _, ratio = _ratios(params, traj)
    return float(np.sum(np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)))


def ppo_gradient(params, traj, adv, eps):
    fwd, actions, ratio = _ratios(params, traj)
    adv = np.asarray(adv, dtype=np.float64)
    clipped = ((adv > 0) & (ratio > 1.0 + eps)) | ((adv < 0) & (ratio < 1.0 - eps))
    # d ratio / d theta = ratio * d log pi / d theta; saturated terms are flat
    return pn.backward_batch(params, fwd, actions, np.where(clipped, 0.0, adv * ratio))


def ppo_update(params, traj, cfg, baseline=None):
    traj.freeze()
    adv = advantages(traj, cfg, baseline)
    for _ in range(cfg.ppo_epochs):
        pn.apply_update(params, ppo_gradient(params, traj, adv, cfg.clip_eps), cfg.lr)
    return params


def update(params, traj, cfg, baseline=None):
    if cfg.algorithm == PPO:
        return ppo_update(params, traj, cfg, baseline)
    return reinforce_update(params, traj, cfg, baseline)
