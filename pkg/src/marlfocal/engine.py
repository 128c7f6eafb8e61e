"""Two-agent ensemble: a Decider that prunes the model pool and an Aggregator that
fuses the selected models' choice distributions into one answer."""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from . import policy as pn
from . import rl
from .diversity import ContractError, FailureHistory, as_mask, team_features

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "marlfocal-checkpoint"
CHECKPOINT_VERSION = 1
STATE_LAYOUT_VERSION = 1
MAX_RESAMPLES = 10


class CheckpointError(ValueError):
    """A checkpoint is malformed or does not match the expected configuration."""


@dataclass
class EngineConfig:
    n_models: int
    k: int
    hidden: tuple = (64,)
    init: str = "glorot-sigmoid"
    alpha: float = 0.1
    gamma: float = 0.8
    lr: float = 0.001
    online_lr: float = None
    clip_eps: float = 0.02
    algorithm: str = rl.REINFORCE
    ppo_epochs: int = 4
    baseline: str = "running-mean"
    returns: str = "to-go"
    episodes: int = 60
    window: int = 500
    update_period: int = 10
    seed: int = 0
    accuracy_features: bool = False
    task_features: tuple = ()

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.task_features = tuple(self.task_features)
        if self.n_models < 1 or self.k < 2:
            raise ValueError("need at least one model and two choices")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.update_period < 1 or self.window < 1:
            raise ValueError("update_period and window must be positive")
        self.update_config()

    def update_config(self, online=False):
        lr = self.online_lr if online and self.online_lr is not None else self.lr
        return rl.UpdateConfig(self.algorithm, lr, self.clip_eps, self.ppo_epochs, self.baseline, self.returns)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["task_features"] = list(self.task_features)
        return d

    @classmethod
    def from_dict(cls, d):
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def decider_dim(self):
        n = self.n_models
        return n + 3 + (n if self.accuracy_features else 0) + len(self.task_features)

    @property
    def aggregator_dim(self):
        return self.n_models * self.k + self.n_models


def plurality_vote(record, mask):
    """Most-voted argmax answer among the selected models.  Ties go to the larger
    summed probability mass, then to the lowest index."""
    members = np.flatnonzero(as_mask(mask, record.n_models)).astype(np.int64)
    if members.shape[0] == 0:
        raise ContractError("cannot vote with an empty ensemble")
    return int(kernels.plurality_votes(record.outputs[None, :, :], members)[0])


def _sample_categorical(probs, u):
    """Inverse-CDF draw(s) from row-wise categorical ``probs`` given uniforms ``u``."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf < np.expand_dims(u, -1) * cdf[..., -1:]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def decider_reward(pred, gold, mask, alpha):
    if pred == gold:
        return 1.0
    mask = np.asarray(mask, dtype=bool)
    return -1.0 - alpha * int(mask.sum()) / mask.shape[0]


def aggregator_reward(pred, gold):
    return 1.0 if pred == gold else -1.0


@dataclass
class StepResult:
    mask: np.ndarray
    prediction: int
    interim: int = None
    correct: bool = None
    updated: bool = False


@dataclass
class EpisodeLog:
    episode: int
    phase: str
    mean_reward: float
    accuracy: float
    mean_pool_size: float

    def to_dict(self):
        return asdict(self)


class MarlFocal:
    def __init__(self, config):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.decider = pn.init_params(pn.BERNOULLI, config.decider_dim, config.n_models, config.hidden, self.rng, config.init)
        self.aggregator = pn.init_params(pn.CATEGORICAL, config.aggregator_dim, config.k, config.hidden, self.rng, config.init)
        self.history = FailureHistory(config.window, config.n_models)
        self.prev_mask = np.ones(config.n_models, dtype=bool)
        self.dec_baseline = rl.RunningBaseline()
        self.agg_baseline = rl.RunningBaseline()
        self.dec_buffer = rl.Trajectory(config.gamma)
        self.agg_buffer = rl.Trajectory(config.gamma)
        self.online_queries = 0
        self.updates = 0
        self.warm = False

    # -- states -----------------------------------------------------------

    def decider_state(self, record=None, prev_mask=None):
        """[mask bits, size fraction, focal diversity, kappa, (accuracy), (task one-hot)]."""
        cfg = self.config
        mask = self.prev_mask if prev_mask is None else as_mask(prev_mask, cfg.n_models)
        members = np.flatnonzero(mask).astype(np.int64)
        lam, kappa = team_features(self.history, members, cfg.k)
        parts = [mask.astype(np.float64), [members.shape[0] / cfg.n_models, lam, kappa]]
        if cfg.accuracy_features:
            parts.append(self.history.accuracy())
        if cfg.task_features:
            onehot = np.zeros(len(cfg.task_features))
            if record is not None and record.task in cfg.task_features:
                onehot[cfg.task_features.index(record.task)] = 1.0
            parts.append(onehot)
        return np.concatenate(parts)

    def aggregator_state(self, record, mask):
        mask = as_mask(mask, self.config.n_models)
        if not mask.any():
            raise ContractError("aggregator needs at least one selected model")
        q = np.where(mask[:, None], record.outputs, 0.0)
        return np.concatenate([q.ravel(), mask.astype(np.float64)])

    # -- agents -----------------------------------------------------------

    def decider_step(self, record=None, train=False, prev_mask=None):
        """Return ``(mask, log_prob, state)``; the mask is never empty."""
        state = self.decider_state(record, prev_mask)
        dist = pn.forward(self.decider, state)
        p = dist.probs
        if train:
            for _ in range(MAX_RESAMPLES):
                mask = self.rng.random(p.shape[0]) < p
                if mask.any():
                    break
        else:
            mask = p > 0.5
        if not mask.any():
            mask = np.zeros(p.shape[0], dtype=bool)
            mask[int(np.argmax(p))] = True
        return mask, pn.log_prob(dist, mask), state

    def aggregator_step(self, record, mask, train=False):
        """Return ``(choice, log_prob, state)``."""
        state = self.aggregator_state(record, mask)
        dist = pn.forward(self.aggregator, state)
        if train:
            choice = int(_sample_categorical(dist.probs, self.rng.random()))
        else:
            choice = int(np.argmax(dist.probs))
        return choice, pn.log_prob(dist, choice), state

    def push(self, record):
        self.history.push(record.correctness(), record.answers())

    def _update(self, params, traj, baseline, online=False):
        if len(traj) == 0:
            return
        rl.update(params, traj, self.config.update_config(online), baseline)
        self.updates += 1

    # -- warm start -------------------------------------------------------

    def bootstrap_history(self, dataset):
        for record in dataset[: min(self.config.window, len(dataset))]:
            self.push(record)

    def warm_start(self, dataset, episodes=None, on_episode=None):
        """Offline training: the first half of the episodes trains the Decider on
        plurality-vote rewards, the second half trains the Aggregator."""
        cfg = self.config
        episodes = cfg.episodes if episodes is None else episodes
        if not dataset:
            raise ValueError("warm-start dataset is empty")
        if episodes < 2:
            raise ValueError("warm start needs at least two episodes")
        for record in dataset:
            self._check_shape(record)
        if self.history.len == 0:
            self.bootstrap_history(dataset)
        outputs = np.stack([r.outputs for r in dataset])
        gold = np.array([r.gold for r in dataset])
        logs = []
        for i in range(episodes):
            decider_phase = i < episodes / 2
            masks, tau_dec, hits, rewards = self._decider_rollout(dataset)
            if decider_phase:
                self._update(self.decider, tau_dec, self.dec_baseline)
            else:
                # aggregator actions never feed back into the episode, so roll them out in one batch
                tau_agg, agg_hits = self._aggregator_rollout(outputs, gold, masks)
                self._update(self.aggregator, tau_agg, self.agg_baseline)
                hits, rewards = agg_hits, tau_agg.rewards
            entry = EpisodeLog(i, "decider" if decider_phase else "aggregator",
                               float(np.mean(rewards)), float(np.mean(hits)), float(masks.sum(axis=1).mean()))
            logs.append(entry)
            log.debug("episode %d %s reward=%.4f acc=%.4f size=%.2f", i, entry.phase,
                      entry.mean_reward, entry.accuracy, entry.mean_pool_size)
            if on_episode is not None:
                on_episode(entry)
        self.prev_mask = np.ones(cfg.n_models, dtype=bool)
        self.warm = True
        return logs

    def _decider_rollout(self, dataset):
        """One pass with sampled decider actions, rewarded by the interim plurality vote."""
        cfg = self.config
        self.prev_mask = np.ones(cfg.n_models, dtype=bool)
        tau = rl.Trajectory(cfg.gamma)
        masks = np.empty((len(dataset), cfg.n_models), dtype=bool)
        hits = np.empty(len(dataset), dtype=bool)
        for t, record in enumerate(dataset):
            mask, logp, state = self.decider_step(record, train=True)
            interim = plurality_vote(record, mask)
            tau.append(state, mask, logp, decider_reward(interim, record.gold, mask, cfg.alpha))
            hits[t] = interim == record.gold
            masks[t] = mask
            self.push(record)
            self.prev_mask = mask
        return masks, tau, hits, tau.rewards

    def _aggregator_rollout(self, outputs, gold, masks):
        cfg = self.config
        q = np.where(masks[:, :, None], outputs, 0.0).reshape(len(gold), -1)
        states = np.hstack([q, masks.astype(np.float64)])
        fwd = pn.forward_batch(self.aggregator, states)
        choices = _sample_categorical(fwd.probs, self.rng.random(len(gold)))
        logps = pn.log_prob_batch(fwd, choices)
        tau = rl.Trajectory(cfg.gamma)
        for t in range(len(gold)):
            tau.append(states[t], int(choices[t]), logps[t], aggregator_reward(choices[t], gold[t]))
        return tau, choices == gold

    # -- inference and online updates ---------------------------------------

    def predict(self, record, push=True):
        """Deterministic decider mask then argmax aggregator.  Pushes the record into
        the history when its gold label is known and ``push`` is set."""
        self._check_shape(record)
        mask, _, _ = self.decider_step(record, train=False)
        choice, _, _ = self.aggregator_step(record, mask, train=False)
        if push and record.gold is not None:
            self.push(record)
        self.prev_mask = mask
        return StepResult(mask, choice, correct=None if record.gold is None else choice == record.gold)

    def online_step(self, record, feedback=True):
        """Emit the deterministic answer; with feedback, also roll out sampled actions
        from the same state, buffer both agents' rewards and update every
        ``update_period`` feedback queries."""
        self._check_shape(record)
        if not feedback or record.gold is None:
            return self.predict(record, push=False)
        cfg = self.config
        prev = self.prev_mask.copy()
        mask, _, _ = self.decider_step(record, train=False, prev_mask=prev)
        choice, _, _ = self.aggregator_step(record, mask, train=False)

        s_mask, s_logp, s_state = self.decider_step(record, train=True, prev_mask=prev)
        s_choice, a_logp, a_state = self.aggregator_step(record, s_mask, train=True)
        self.dec_buffer.append(s_state, s_mask, s_logp, decider_reward(s_choice, record.gold, s_mask, cfg.alpha))
        self.agg_buffer.append(a_state, s_choice, a_logp, aggregator_reward(s_choice, record.gold))

        self.push(record)
        self.prev_mask = mask
        self.online_queries += 1
        updated = False
        if self.online_queries % cfg.update_period == 0:
            self._update(self.decider, self.dec_buffer, self.dec_baseline, online=True)
            self._update(self.aggregator, self.agg_buffer, self.agg_baseline, online=True)
            self.dec_buffer = rl.Trajectory(cfg.gamma)
            self.agg_buffer = rl.Trajectory(cfg.gamma)
            updated = True
        return StepResult(mask, choice, correct=choice == record.gold, updated=updated)

    def decider_only_route(self, record, push=True):
        """Routing without the Aggregator: a single selected model answers alone,
        otherwise the selected models vote."""
        self._check_shape(record)
        mask, _, _ = self.decider_step(record, train=False)
        members = np.flatnonzero(mask)
        if members.shape[0] == 1:
            choice = int(np.argmax(record.outputs[members[0]]))
        else:
            choice = plurality_vote(record, mask)
        if push and record.gold is not None:
            self.push(record)
        self.prev_mask = mask
        return StepResult(mask, choice, correct=None if record.gold is None else choice == record.gold)

    def evaluate(self, records, route=False):
        results = [(self.decider_only_route if route else self.predict)(r) for r in records]
        return results

    def _check_shape(self, record):
        if record.outputs.shape != (self.config.n_models, self.config.k):
            raise ContractError(
                f"record {record.id!r} has outputs {record.outputs.shape}, engine expects "
                f"({self.config.n_models}, {self.config.k})"
            )

    # -- checkpoints --------------------------------------------------------

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "state_layout": STATE_LAYOUT_VERSION,
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "decider": pn.to_dict(self.decider),
            "aggregator": pn.to_dict(self.aggregator),
            "history": self.history.snapshot(),
            "prev_mask": self.prev_mask.astype(int).tolist(),
            "baselines": {"decider": self.dec_baseline.state(), "aggregator": self.agg_baseline.state()},
            "online_queries": self.online_queries,
            "updates": self.updates,
            "warm": self.warm,
            "rng": self.rng.bit_generator.state,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError("not a compatible engine checkpoint")
        try:
            config = EngineConfig.from_dict(data["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"bad checkpoint config: {exc}") from exc
        if config.hash() != data.get("config_hash"):
            raise CheckpointError("checkpoint config hash does not match its config")
        eng = cls(config)
        eng.decider = pn.from_dict(data["decider"])
        eng.aggregator = pn.from_dict(data["aggregator"])
        eng.history = FailureHistory.from_snapshot(data["history"])
        eng.prev_mask = np.array(data["prev_mask"], dtype=bool)
        eng.dec_baseline.restore(data["baselines"]["decider"])
        eng.agg_baseline.restore(data["baselines"]["aggregator"])
        eng.online_queries = data["online_queries"]
        eng.updates = data["updates"]
        eng.warm = data["warm"]
        eng.rng.bit_generator.state = data["rng"]
        return eng

    @classmethod
    def load(cls, path, expect_hash=None):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        eng = cls.from_dict(data)
        if expect_hash is not None and eng.config.hash() != expect_hash:
            raise CheckpointError(
                f"checkpoint {path} was trained with config {eng.config.hash()[:12]}, expected {expect_hash[:12]}"
            )
        return eng
