"""Baseline accuracies, the team diversity/accuracy surface and accuracy-vs-cost
rows, all computed over a fixed list of query records."""
import copy
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .data import CostTable, DataError, query_cost, stack_outputs
from .diversity import ContractError, FailureHistory, enumerate_teams, fleiss_kappa, focal_diversity, mask_to_str

MAX_SURFACE_MODELS = 16
SURFACE_HEADER = ["mask", "size", "focal_diversity", "fleiss_kappa", "accuracy"]
COST_HEADER = ["method", "accuracy", "mean_cost"]
MARL_METHOD = "marl-focal"
PLURALITY_METHOD = "plurality-all"
RANDOM_METHOD = "random-subset"


@dataclass
class MethodResult:
    method: str
    accuracy: float  # percent
    mean_pool_size: float
    mean_cost: float = None
    std: float = None  # percent, over seeds; None for deterministic methods
    seeds: int = 1
    per_task: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    n_queries: int
    n_models: int
    methods: list

    def get(self, method):
        for m in self.methods:
            if m.method == method:
                return m
        raise KeyError(method)

    def best_single(self):
        singles = [m for m in self.methods if m.method.startswith("model-")]
        return max(singles, key=lambda m: m.accuracy)

    def to_dict(self):
        return {"n_queries": self.n_queries, "n_models": self.n_models,
                "methods": [asdict(m) for m in self.methods]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        lines = [f"{'method':<16} {'acc %':>8} {'std':>6} {'size':>6} {'cost':>10}"]
        for m in self.methods:
            std = "" if m.std is None else f"{m.std:.2f}"
            cost = "" if m.mean_cost is None else f"{m.mean_cost:.6g}"
            lines.append(f"{m.method:<16} {m.accuracy:>8.2f} {std:>6} {m.mean_pool_size:>6.2f} {cost:>10}")
        return "\n".join(lines)


def _check_records(records):
    if not records:
        raise DataError("dataset is empty")
    shape = records[0].outputs.shape
    for r in records:
        if r.outputs.shape != shape:
            raise DataError(f"record {r.id!r} has outputs {r.outputs.shape}, expected {shape}")
    return shape


def _per_task(records, hits):
    tasks = {}
    for r, h in zip(records, hits):
        tasks.setdefault(r.task, []).append(bool(h))
    return {t: 100.0 * float(np.mean(v)) for t, v in sorted(tasks.items())}


def _costs(records, masks, table):
    """Mean per-query cost of ``masks`` ((R, N) bool); record costs override the table."""
    if table is None and any(r.costs is None for r in records):
        return None
    n_rec = len(records)
    total = 0.0
    table_masks = {}
    for r, m in zip(records, masks):
        if r.costs is not None:
            total += float(np.sum(r.costs[m])) / n_rec
        else:
            entry = table_masks.setdefault(m.tobytes(), [m, 0])
            entry[1] += 1
    # weight each distinct mask by its frequency so a constant mask costs exactly its unit cost
    for m, count in table_masks.values():
        total += (count / n_rec) * query_cost(m, table)
    return total


def _result(method, records, hits, masks, table):
    return MethodResult(method, 100.0 * float(np.mean(hits)), float(masks.sum(axis=1).mean()),
                        _costs(records, masks, table), per_task=_per_task(records, hits))


def random_subset_votes(outputs, seed):
    """Plurality over a random team per query; team size uniform on 2..N."""
    n_rec, n, _ = outputs.shape
    rng = np.random.default_rng(seed)
    preds = np.empty(n_rec, dtype=np.int64)
    masks = np.zeros((n_rec, n), dtype=bool)
    for r in range(n_rec):
        size = int(rng.integers(2, n + 1))
        members = np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)
        masks[r, members] = True
        preds[r] = kernels.plurality_votes(outputs[r : r + 1], members)[0]
    return preds, masks


def eval_baselines(records, costs=None, engine=None, seeds=5):
    """Single models, full-pool plurality, seeded random-subset plurality and,
    when ``engine`` is given, its eval-mode accuracy.  ``costs`` is a CostTable
    or None; the engine is copied so its history is left untouched."""
    n_rec, n, k = (len(records),) + _check_records(records)[0:2]
    outputs, gold = stack_outputs(records)
    if isinstance(costs, (list, tuple, np.ndarray)):
        costs = CostTable(costs)
    methods = []
    answers = np.argmax(outputs, axis=2)
    for i in range(n):
        mask = np.zeros((n_rec, n), dtype=bool)
        mask[:, i] = True
        methods.append(_result(f"model-{i}", records, answers[:, i] == gold, mask, costs))

    everyone = np.arange(n, dtype=np.int64)
    votes = kernels.plurality_votes(outputs, everyone)
    methods.append(_result(PLURALITY_METHOD, records, votes == gold, np.ones((n_rec, n), dtype=bool), costs))

    if n >= 2 and seeds >= 1:
        accs, sizes, spend, all_hits = [], [], [], []
        for s in range(seeds):
            preds, masks = random_subset_votes(outputs, s)
            accs.append(100.0 * float(np.mean(preds == gold)))
            sizes.append(masks.sum(axis=1).mean())
            spend.append(_costs(records, masks, costs))
            all_hits.append(preds == gold)
        mean_hits = np.mean(all_hits, axis=0)
        methods.append(MethodResult(
            RANDOM_METHOD, float(np.mean(accs)), float(np.mean(sizes)),
            None if spend[0] is None else float(np.mean(spend)),
            std=float(np.std(accs, ddof=1)) if seeds >= 2 else None,
            seeds=seeds, per_task=_per_task(records, mean_hits),
        ))

    if engine is not None:
        eng = copy.deepcopy(engine)
        results = eng.evaluate(records)
        hits = np.array([res.correct for res in results])
        masks = np.array([res.mask for res in results])
        methods.append(_result(MARL_METHOD, records, hits, masks, costs))
    return EvalReport(n_rec, n, methods)


def surface_rows(records, n=None):
    """One row per team of two or more models, ascending by mask encoding, with
    metrics taken over the whole dataset as the window."""
    n_models, k = _check_records(records)
    n = n_models if n is None else n
    if n > MAX_SURFACE_MODELS:
        raise ContractError(
            f"surface enumeration over {n} models means {2**n - n - 1} teams; "
            f"restrict the pool to at most {MAX_SURFACE_MODELS} models"
        )
    if n != n_models:
        raise DataError(f"dataset has {n_models} models, asked for {n}")
    outputs, gold = stack_outputs(records)
    answers = np.argmax(outputs, axis=2)
    history = FailureHistory.from_rows(answers == gold[:, None], answers)
    rows = []
    for mask in enumerate_teams(n, 2):
        members = np.flatnonzero(mask).astype(np.int64)
        acc = float(np.mean(kernels.plurality_votes(outputs, members) == gold))
        rows.append((mask_to_str(mask), int(members.shape[0]), focal_diversity(history, mask).lam,
                     fleiss_kappa(history, mask, k), acc))
    return rows


def surface_export(records, out_path, n=None):
    rows = surface_rows(records, n)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SURFACE_HEADER)
        for mask, size, lam, kap, acc in rows:
            w.writerow([mask, size, repr(lam), repr(kap), repr(acc)])
    return len(rows)


def cost_curve(report, out_path=None):
    """(method, accuracy %, mean cost) rows sorted by cost."""
    missing = [m.method for m in report.methods if m.mean_cost is None]
    if missing:
        raise ContractError(f"no cost for {', '.join(missing)}; supply a cost table")
    rows = sorted(((m.method, m.accuracy, m.mean_cost) for m in report.methods), key=lambda r: (r[2], r[0]))
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COST_HEADER)
            for method, acc, cost in rows:
                w.writerow([method, repr(acc), repr(cost)])
    return rows
