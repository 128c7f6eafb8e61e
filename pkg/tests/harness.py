"""Seeded experiments shared by the module tests and the acceptance suite."""
import numpy as np

from marlfocal import policy as pn
from marlfocal import rl
from marlfocal.data import SyntheticPoolSpec, synth_stream
from marlfocal.engine import EngineConfig, MarlFocal
from conftest import lift_pool


def bandit_run(algorithm, seed, updates=500, lr=0.1, hidden=(8,)):
    """Two-armed bandit with one state: arm 0 pays +1, arm 1 pays -1.

    Each update uses a single sampled pull.  Returns P(arm 0) after every update.
    """
    rng = np.random.default_rng(seed)
    params = pn.init_params(pn.CATEGORICAL, 1, 2, hidden, rng)
    cfg = rl.UpdateConfig(algorithm=algorithm, lr=lr)
    baseline = rl.RunningBaseline()
    state = np.ones(1)
    trace = np.empty(updates)
    for u in range(updates):
        dist = pn.forward(params, state)
        arm = int(rng.random() >= dist.probs[0])
        traj = rl.Trajectory(gamma=0.8)
        traj.append(state, arm, pn.log_prob(dist, arm), 1.0 if arm == 0 else -1.0)
        rl.update(params, traj, cfg, baseline)
        trace[u] = pn.forward(params, state).probs[0]
    return trace


LIFT_TRAIN = 2000
LIFT_TEST = 2000


def lift_run(seed, alpha=0.1, algorithm=rl.REINFORCE):
    """Warm start on the lift pool with default hyperparameters, then score held-out queries.

    Returns (accuracy, mean pool size) of the deterministic policy.
    """
    spec = lift_pool()
    rng = np.random.default_rng(seed)
    train = synth_stream(spec, LIFT_TRAIN, rng)
    test = synth_stream(spec, LIFT_TEST, rng, start=LIFT_TRAIN)
    eng = MarlFocal(EngineConfig(n_models=5, k=4, seed=seed, alpha=alpha, algorithm=algorithm))
    eng.warm_start(train)
    results = eng.evaluate(test)
    return float(np.mean([r.correct for r in results])), float(np.mean([r.mask.sum() for r in results]))


SHIFT_PRE = [0.85, 0.85, 0.35, 0.35, 0.35]
SHIFT_GROUPS = [0, 1, 2, 2, 2]
SHIFT_AT = 500


def shift_pools():
    pre = SyntheticPoolSpec(n=5, k=4, accuracies=SHIFT_PRE, groups=SHIFT_GROUPS, corr=1.0)
    post = SyntheticPoolSpec(n=5, k=4, accuracies=[0.35, 0.35, 0.85, 0.85, 0.85],
                             groups=SHIFT_GROUPS, corr=1.0)
    return pre, post


def shift_run(seed, warm=2000, block=250, **overrides):
    """Online stream whose two agent groups swap accuracy after ``SHIFT_AT`` queries.

    The warm start sees both regimes in alternating blocks so the history features
    have met each one.  Returns the per-query hit vector of the emitted answers.
    """
    pre, post = shift_pools()
    rng = np.random.default_rng(seed)
    train = []
    for b in range(warm // block):
        train += synth_stream(pre if b % 2 == 0 else post, block, rng, start=len(train))
    stream = synth_stream(pre, SHIFT_AT, rng, start=warm)
    stream += synth_stream(post, SHIFT_AT, rng, start=warm + SHIFT_AT)
    cfg = dict(accuracy_features=True, window=200)
    cfg.update(overrides)
    eng = MarlFocal(EngineConfig(n_models=5, k=4, seed=seed, **cfg))
    eng.warm_start(train)
    return np.array([eng.online_step(r).correct for r in stream], dtype=float)


def recovery(hits, window=100, horizon=300):
    """Pre-shift rolling level and the best fully post-shift rolling level reached
    within ``horizon`` queries of the swap."""
    pre_level = hits[SHIFT_AT - window:SHIFT_AT].mean()
    ends = range(SHIFT_AT + window, SHIFT_AT + horizon + 1)
    post_best = max(hits[t - window:t].mean() for t in ends)
    return float(pre_level), float(post_best)
