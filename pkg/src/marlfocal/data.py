"""Query streams: JSONL replay of recorded model outputs, a synthetic pool of
correlated agents, and per-model inference costs."""
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

SCHEMA_VERSION = 1
SIMPLEX_TOL = 1e-6


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class CostError(KeyError):
    """The cost table lacks an entry for a selected model."""


@dataclass
class QueryRecord:
    id: str
    task: str
    k: int
    gold: int
    outputs: np.ndarray  # (N, k)
    costs: np.ndarray = None

    @property
    def n_models(self):
        return self.outputs.shape[0]

    def answers(self):
        """Each model's argmax choice (cached; outputs are treated as immutable)."""
        cached = self.__dict__.get("_answers")
        if cached is None:
            cached = self.__dict__["_answers"] = np.argmax(self.outputs, axis=1)
        return cached

    def correctness(self):
        return (self.answers() == self.gold).astype(np.uint8)

    def to_json(self):
        obj = {
            "v": SCHEMA_VERSION,
            "id": self.id,
            "task": self.task,
            "k": self.k,
            "gold": self.gold,
            "outputs": self.outputs.tolist(),
        }
        if self.costs is not None:
            obj["costs"] = self.costs.tolist()
        return json.dumps(obj)


def record_from_obj(obj, renormalize=False):
    try:
        k = int(obj["k"])
        gold = int(obj["gold"])
        outputs = np.array(obj["outputs"], dtype=np.float64)
        rec_id = str(obj["id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad record: {exc}") from exc
    if obj.get("v", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise DataError(f"unsupported schema version {obj.get('v')}")
    if outputs.ndim != 2 or outputs.shape[1] != k:
        raise DataError(f"outputs must be an N x {k} matrix")
    if not 0 <= gold < k:
        raise DataError(f"gold index {gold} outside 0..{k - 1}")
    if not np.all(np.isfinite(outputs)) or np.any(outputs < 0):
        raise DataError("outputs must be finite and non-negative")
    sums = outputs.sum(axis=1)
    off = np.abs(sums - 1.0) > SIMPLEX_TOL
    if np.any(off):
        if not renormalize:
            raise DataError(f"probability vectors off the simplex (sums {sums[off].tolist()})")
        if np.any(sums <= 0):
            raise DataError("cannot renormalize an all-zero probability vector")
        outputs = outputs / sums[:, None]
    costs = obj.get("costs")
    if costs is not None:
        costs = np.array(costs, dtype=np.float64)
        if costs.shape != (outputs.shape[0],) or np.any(costs < 0):
            raise DataError("costs must be one non-negative value per model")
    return QueryRecord(rec_id, str(obj.get("task", "")), k, gold, outputs, costs)


def load_jsonl(path, renormalize=False):
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(record_from_obj(json.loads(line), renormalize))
            except (json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if records:
        shape = records[0].outputs.shape
        for lineno, rec in enumerate(records, 1):
            if rec.outputs.shape[0] != shape[0]:
                raise DataError(f"{path}: record {rec.id!r} has {rec.outputs.shape[0]} models, expected {shape[0]}")
    return records


def save_jsonl(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def stack_outputs(records):
    """(R, N, k) array of outputs and (R,) gold vector."""
    return np.stack([r.outputs for r in records]), np.array([r.gold for r in records], dtype=np.int64)


def train_test_split(records, test_ratio=1 / 6, seed=0):
    """Seeded shuffle then split; a 1:5 test:train ratio by default."""
    order = np.random.default_rng(seed).permutation(len(records))
    n_test = int(round(len(records) * test_ratio))
    test = [records[i] for i in sorted(order[:n_test])]
    train = [records[i] for i in sorted(order[n_test:])]
    return train, test


def freqs_from_passes(answers):
    """Normalised answer frequencies over repeated passes.

    Returns ``(vocab, probs)`` with the vocabulary in first-appearance order.
    """
    if not answers:
        raise ValueError("no passes to count")
    counts = {}
    for ans in answers:
        counts[ans] = counts.get(ans, 0) + 1
    vocab = list(counts)
    probs = np.array([counts[a] for a in vocab], dtype=np.float64) / len(answers)
    return vocab, probs


def _per_agent(value, n, name):
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (n,)).copy()
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or have one entry per agent")
    return arr


@dataclass
class SyntheticPoolSpec:
    """Agents whose correctness is partly copied from a shared per-group draw.

    ``accuracies`` may instead be a mapping ``task -> accuracies`` to build
    task specialists; queries then draw their task uniformly from the keys.
    """

    n: int
    k: int = 4
    accuracies: object = 0.7
    groups: list = None
    corr: object = 0.0
    conf: object = 0.7
    seed: int = 0
    tasks: list = field(default=None)

    def __post_init__(self):
        if self.groups is None:
            self.groups = list(range(self.n))
        groups = np.asarray(self.groups)
        if groups.shape != (self.n,) or set(groups.tolist()) != set(range(int(groups.max()) + 1)):
            raise ValueError("group ids must be dense in 0..G-1, one per agent")
        if isinstance(self.accuracies, dict):
            self.tasks = list(self.accuracies)
            self._acc = {t: _per_agent(v, self.n, "accuracies") for t, v in self.accuracies.items()}
        else:
            self.tasks = self.tasks or ["synthetic"]
            acc = _per_agent(self.accuracies, self.n, "accuracies")
            self._acc = {t: acc for t in self.tasks}
        self._corr = _per_agent(self.corr, self.n, "corr")
        self._conf = _per_agent(self.conf, self.n, "conf")
        for arr in (*self._acc.values(), self._corr):
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValueError("probabilities must lie in [0, 1]")
        if np.any(self._conf <= 1.0 / self.k) or np.any(self._conf > 1):
            raise ValueError("conf must lie in (1/k, 1]")

    def accuracy_for(self, task):
        return self._acc[task]


def _peaked(k, choice, conf):
    q = np.full(k, (1.0 - conf) / (k - 1))
    q[choice] = conf
    return q


def synth_next(spec, rng, index=0):
    """Draw one synthetic query.  Consumes a fixed number of variates per call."""
    groups = np.asarray(spec.groups)
    n_groups = int(groups.max()) + 1
    task = spec.tasks[int(rng.integers(len(spec.tasks)))] if len(spec.tasks) > 1 else spec.tasks[0]
    acc = spec.accuracy_for(task)
    gold = int(rng.integers(spec.k))
    group_acc = np.array([acc[groups == g].mean() for g in range(n_groups)])
    shared_ok = rng.random(n_groups) < group_acc
    shared_wrong = rng.integers(spec.k - 1, size=n_groups)
    copy = rng.random(spec.n) < spec._corr
    own_ok = rng.random(spec.n) < acc
    own_wrong = rng.integers(spec.k - 1, size=spec.n)
    outputs = np.empty((spec.n, spec.k))
    for i in range(spec.n):
        g = groups[i]
        ok = shared_ok[g] if copy[i] else own_ok[i]
        if ok:
            choice = gold
        else:
            # wrong choices are indexed among the k-1 non-gold options
            w = shared_wrong[g] if copy[i] else own_wrong[i]
            choice = int(w) + (1 if w >= gold else 0)
        outputs[i] = _peaked(spec.k, choice, spec._conf[i])
    return QueryRecord(f"q{index:06d}", task, spec.k, gold, outputs)


def synth_stream(spec, n_queries, rng=None, start=0):
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return [synth_next(spec, rng, start + i) for i in range(n_queries)]


class CostTable:
    """Per-model inference cost per query, in configured currency units."""

    def __init__(self, costs):
        self.costs = [float(c) for c in costs]
        if any(c < 0 or math.isnan(c) for c in self.costs):
            raise ValueError("costs must be non-negative")

    def __len__(self):
        return len(self.costs)

    def __getitem__(self, i):
        if not 0 <= i < len(self.costs):
            raise CostError(f"no cost entry for model {i}")
        return self.costs[i]

    @classmethod
    def default(cls, n):
        """Illustrative bundled unit costs; models beyond the table cost 1 unit."""
        table = json.loads(resources.files("marlfocal").joinpath("default_costs.json").read_text())
        bundled = table["cost_per_query"]
        return cls([bundled[i] if i < len(bundled) else 1.0 for i in range(n)])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        return cls(data["cost_per_query"] if isinstance(data, dict) else data)


def query_cost(mask, table):
    return float(sum(table[i] for i in np.flatnonzero(np.asarray(mask, dtype=bool))))


def record_cost(record, mask, table):
    """Cost of one query: the record's own costs when present, else the table."""
    if record.costs is not None:
        return float(np.sum(record.costs[np.asarray(mask, dtype=bool)]))
    return query_cost(mask, table)
