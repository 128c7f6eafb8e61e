"""Sigmoid MLP policies with hand-written forward and backward passes.

Two head layouts share one trunk implementation:

* ``bernoulli``: one sigmoid unit per action (independent inclusion decisions),
  each with its own weight row over the shared penultimate features.
* ``categorical``: a softmax over ``k`` choices.

Every weight matrix carries its bias as the last column.  Hidden units are
sigmoids, and each layer consumes its input's activations shifted by -1/2.  The
shift only reparametrises the consuming layer's bias (``W(z - 1/2) + b`` equals
``Wz + b'``), so the function class is unchanged, but gradient steps are far
better conditioned than with raw 0..1 activations.
"""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as _sigmoid

PROB_EPS = 1e-6
CHECKPOINT_FORMAT = "marlfocal-policy"
CHECKPOINT_VERSION = 1
HEAD_INIT_SCALE = 0.01

BERNOULLI = "bernoulli"
CATEGORICAL = "categorical"
INIT_SCHEMES = ("glorot-sigmoid", "fan-in")


class SkippedUpdateWarning(RuntimeWarning):
    pass


def _with_bias(x):
    return np.append(x, 1.0)


def _with_bias_rows(x):
    return np.hstack([x, np.ones((x.shape[0], 1))])


@dataclass
class PolicyParams:
    kind: str
    trunk: list
    head: np.ndarray

    @property
    def input_dim(self):
        return (self.trunk[0] if self.trunk else self.head).shape[1] - 1

    @property
    def output_dim(self):
        return self.head.shape[0]

    @property
    def hidden(self):
        return tuple(w.shape[0] for w in self.trunk)

    def arrays(self):
        return [*self.trunk, self.head]

    def copy(self):
        return PolicyParams(self.kind, [w.copy() for w in self.trunk], self.head.copy())

    def zeros_like(self):
        return [np.zeros_like(a) for a in self.arrays()]


def _bound(scheme, fan_in, fan_out, head):
    if scheme == "fan-in":
        return 1.0 / np.sqrt(fan_in)
    if head:
        return HEAD_INIT_SCALE * np.sqrt(6.0 / (fan_in + fan_out))
    return 4.0 * np.sqrt(6.0 / (fan_in + fan_out))


def init_params(kind, input_dim, output_dim, hidden=(64,), rng=None, scheme="glorot-sigmoid"):
    """Uniform initialisation U(-b, b) of every layer, biases included.

    ``glorot-sigmoid``: trunk b = 4 * sqrt(6 / (fan_in + fan_out)); the head uses
    the plain Glorot bound scaled by ``HEAD_INIT_SCALE`` so the initial policy is
    close to uniform.  ``fan-in``: b = 1 / sqrt(fan_in) everywhere.
    """
    if kind not in (BERNOULLI, CATEGORICAL):
        raise ValueError(f"unknown head kind {kind!r}")
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    sizes = [input_dim, *hidden]
    trunk = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = _bound(scheme, fan_in, fan_out, False)
        trunk.append(rng.uniform(-bound, bound, size=(fan_out, fan_in + 1)))
    bound = _bound(scheme, sizes[-1], output_dim, True)
    head = rng.uniform(-bound, bound, size=(output_dim, sizes[-1] + 1))
    return PolicyParams(kind, trunk, head)


@dataclass
class ActionDistribution:
    kind: str
    probs: np.ndarray
    log_probs: np.ndarray = None  # categorical only; log-softmax of the logits
    cache: list = field(default=None, repr=False)


def _check_state(params, s):
    if s.shape[-1] != params.input_dim:
        raise ValueError(f"state has {s.shape[-1]} entries, policy expects {params.input_dim}")
    if not np.isfinite(s.sum()):
        raise ValueError("state contains non-finite entries")


def forward(params, state):
    s = np.asarray(state, dtype=np.float64).ravel()
    _check_state(params, s)
    acts = [s]
    a = s
    for w in params.trunk:
        a = _sigmoid(w[:, :-1] @ a + w[:, -1]) - 0.5
        acts.append(a)
    logits = params.head[:, :-1] @ a + params.head[:, -1]
    if params.kind == BERNOULLI:
        p = np.minimum(np.maximum(_sigmoid(logits), PROB_EPS), 1.0 - PROB_EPS)
        return ActionDistribution(BERNOULLI, p, cache=acts)
    shifted = logits - logits.max()
    logp = shifted - np.log(np.sum(np.exp(shifted)))
    return ActionDistribution(CATEGORICAL, np.exp(logp), logp, cache=acts)


def log_prob(dist, action):
    if dist.kind == BERNOULLI:
        a = np.asarray(action).ravel()
        if a.shape != dist.probs.shape:
            raise ValueError("action vector does not match the number of heads")
        p = dist.probs
        return float(np.log(np.where(a != 0, p, 1.0 - p)).sum())
    idx = int(action)
    if not 0 <= idx < dist.probs.shape[0]:
        raise ValueError(f"action {idx} outside 0..{dist.probs.shape[0] - 1}")
    return float(dist.log_probs[idx])


def _output_delta(kind, probs, actions):
    """d log pi / d logits, row-wise."""
    if kind == BERNOULLI:
        return np.asarray(actions, dtype=np.float64) - probs
    delta = -probs.copy()
    if delta.ndim == 1:
        delta[int(actions)] += 1.0
    else:
        delta[np.arange(delta.shape[0]), np.asarray(actions, dtype=np.int64)] += 1.0
    return delta


def backward(params, dist, action, scale=1.0):
    """Gradient of ``scale * log_prob(dist, action)`` with respect to every array in
    ``params.arrays()``.  ``dist`` must come from ``forward(params, ...)``."""
    acts = dist.cache
    delta = _output_delta(dist.kind, dist.probs, action) * scale
    grads = [None] * (len(params.trunk) + 1)
    grads[-1] = np.outer(delta, _with_bias(acts[-1]))
    back = params.head[:, :-1].T @ delta
    for layer in range(len(params.trunk) - 1, -1, -1):
        out = acts[layer + 1] + 0.5
        pre = back * out * (1.0 - out)
        grads[layer] = np.outer(pre, _with_bias(acts[layer]))
        back = params.trunk[layer][:, :-1].T @ pre
    return grads


@dataclass
class BatchForward:
    kind: str
    probs: np.ndarray
    log_probs: np.ndarray
    acts: list


def forward_batch(params, states):
    """Row-wise :func:`forward` over a (B, input_dim) matrix."""
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    _check_state(params, s)
    acts = [s]
    a = s
    for w in params.trunk:
        a = _sigmoid(a @ w[:, :-1].T + w[:, -1]) - 0.5
        acts.append(a)
    logits = a @ params.head[:, :-1].T + params.head[:, -1]
    if params.kind == BERNOULLI:
        p = np.clip(_sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
        return BatchForward(BERNOULLI, p, None, acts)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    return BatchForward(CATEGORICAL, np.exp(logp), logp, acts)


def log_prob_batch(fwd, actions):
    if fwd.kind == BERNOULLI:
        a = np.asarray(actions, dtype=np.float64)
        p = fwd.probs
        return np.sum(a * np.log(p) + (1.0 - a) * np.log(1.0 - p), axis=1)
    idx = np.asarray(actions, dtype=np.int64)
    return fwd.log_probs[np.arange(idx.shape[0]), idx]


def backward_batch(params, fwd, actions, scales):
    """Sum over rows of ``scales[b] * grad log pi(actions[b] | states[b])``."""
    delta = _output_delta(fwd.kind, fwd.probs, actions) * np.asarray(scales, dtype=np.float64)[:, None]
    acts = fwd.acts
    grads = [None] * (len(params.trunk) + 1)
    grads[-1] = delta.T @ _with_bias_rows(acts[-1])
    back = delta @ params.head[:, :-1]
    for layer in range(len(params.trunk) - 1, -1, -1):
        out = acts[layer + 1] + 0.5
        pre = back * out * (1.0 - out)
        grads[layer] = pre.T @ _with_bias_rows(acts[layer])
        back = pre @ params.trunk[layer][:, :-1]
    return grads


def add_grads(acc, grads):
    for a, g in zip(acc, grads):
        a += g
    return acc


def apply_update(params, grads, lr):
    """Gradient ascent ``params += lr * grads`` in place.  A non-finite gradient skips
    the step and emits :class:`SkippedUpdateWarning`."""
    if len(grads) != len(params.arrays()):
        raise ValueError("gradient does not match parameter layout")
    for p, g in zip(params.arrays(), grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            warnings.warn("non-finite policy gradient, update skipped", SkippedUpdateWarning)
            return params
    for p, g in zip(params.arrays(), grads):
        p += lr * g
    return params


def to_dict(params):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": params.kind,
        "dims": [params.input_dim, *params.hidden, params.output_dim],
        "trunk": [w.ravel().tolist() for w in params.trunk],
        "head": params.head.ravel().tolist(),
    }


def from_dict(data):
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a policy checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported policy checkpoint version {data.get('version')}")
    dims = data["dims"]
    trunk = []
    for fan_in, fan_out, flat in zip(dims[:-2], dims[1:-1], data["trunk"]):
        trunk.append(np.array(flat, dtype=np.float64).reshape(fan_out, fan_in + 1))
    head = np.array(data["head"], dtype=np.float64).reshape(dims[-1], dims[-2] + 1)
    return PolicyParams(data["kind"], trunk, head)


def save(params, path):
    with open(path, "w") as fh:
        json.dump(to_dict(params), fh)


def load(path):
    with open(path) as fh:
        return from_dict(json.load(fh))
