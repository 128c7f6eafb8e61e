import json
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marlfocal.data import (
    CostError,
    CostTable,
    DataError,
    QueryRecord,
    SyntheticPoolSpec,
    freqs_from_passes,
    load_jsonl,
    query_cost,
    record_cost,
    save_jsonl,
    synth_stream,
    train_test_split,
)


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))


def rec_obj(i, outputs, gold=0, k=3):
    return {"v": 1, "id": f"r{i}", "task": "t", "k": k, "gold": gold, "outputs": outputs}


def test_load_preserves_order(tmp_path):
    p = tmp_path / "d.jsonl"
    write_lines(p, [rec_obj(i, [[0.2, 0.3, 0.5], [1, 0, 0]], gold=i % 3) for i in range(3)])
    recs = load_jsonl(p)
    assert [r.id for r in recs] == ["r0", "r1", "r2"]
    assert [r.gold for r in recs] == [0, 1, 2]


def test_off_simplex_rejected_with_line_number(tmp_path):
    p = tmp_path / "d.jsonl"
    write_lines(p, [rec_obj(0, [[1, 0, 0]]), rec_obj(1, [[0.4, 0.2, 0.2]])])
    with pytest.raises(DataError, match=":2:"):
        load_jsonl(p)


def test_renormalize(tmp_path):
    p = tmp_path / "d.jsonl"
    write_lines(p, [rec_obj(0, [[0.4, 0.2, 0.2]])])
    rec = load_jsonl(p, renormalize=True)[0]
    assert np.allclose(rec.outputs, [[0.5, 0.25, 0.25]], atol=1e-15)


@pytest.mark.parametrize("bad", [
    "not json",
    json.dumps({"id": "x", "k": 3, "gold": 5, "outputs": [[1, 0, 0]]}),
    json.dumps({"id": "x", "k": 3, "gold": 0, "outputs": [[1, 0]]}),
    json.dumps({"id": "x", "k": 3, "gold": 0}),
    json.dumps({"v": 2, "id": "x", "k": 3, "gold": 0, "outputs": [[1, 0, 0]]}),
    json.dumps({"id": "x", "k": 3, "gold": 0, "outputs": [[1.5, -0.5, 0]]}),
])
def test_malformed_lines(tmp_path, bad):
    p = tmp_path / "d.jsonl"
    p.write_text(bad + "\n")
    with pytest.raises(DataError, match=":1:"):
        load_jsonl(p)


def test_inconsistent_pool_size(tmp_path):
    p = tmp_path / "d.jsonl"
    write_lines(p, [rec_obj(0, [[1, 0, 0]]), rec_obj(1, [[1, 0, 0], [0, 1, 0]])])
    with pytest.raises(DataError):
        load_jsonl(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_save_load_round_trip(seed):
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(4):
        out = rng.dirichlet(np.ones(4), size=3)
        costs = rng.random(3) if i % 2 else None
        recs.append(QueryRecord(f"q{i}", "t", 4, int(rng.integers(4)), out, costs))
    with tempfile.TemporaryDirectory() as d:
        path = f"{d}/r.jsonl"
        save_jsonl(recs, path)
        back = load_jsonl(path)
    for a, b in zip(recs, back):
        assert a.id == b.id and a.gold == b.gold
        assert np.array_equal(a.outputs, b.outputs)
        assert (a.costs is None and b.costs is None) or np.array_equal(a.costs, b.costs)


def test_freqs_from_passes():
    vocab, p = freqs_from_passes(["12", "12", "7"])
    assert vocab == ["12", "7"] and np.allclose(p, [2 / 3, 1 / 3])
    vocab, p = freqs_from_passes(["a"] * 5)
    assert vocab == ["a"] and p.tolist() == [1.0]
    vocab, p = freqs_from_passes([str(i) for i in range(10)])
    assert np.allclose(p, 0.1)
    with pytest.raises(ValueError):
        freqs_from_passes([])


def test_split_ratio_and_determinism():
    recs = [QueryRecord(str(i), "t", 2, 0, np.array([[1.0, 0.0]])) for i in range(60)]
    train, test = train_test_split(recs, seed=3)
    assert len(test) == 10 and len(train) == 50
    assert {r.id for r in train}.isdisjoint(r.id for r in test)
    assert [r.id for r in train_test_split(recs, seed=3)[1]] == [r.id for r in test]


# -- synthetic pool ------------------------------------------------------------

def correctness(recs):
    return np.array([r.correctness() for r in recs])


def test_full_correlation_copies_group_outcome():
    spec = SyntheticPoolSpec(n=2, k=4, accuracies=0.6, groups=[0, 0], corr=1.0)
    c = correctness(synth_stream(spec, 2000))
    assert np.array_equal(c[:, 0], c[:, 1])


def test_perfect_agent_peaks_on_gold():
    spec = SyntheticPoolSpec(n=1, k=4, accuracies=1.0, conf=0.7)
    for r in synth_stream(spec, 50):
        assert np.argmax(r.outputs[0]) == r.gold
        assert r.outputs[0][r.gold] == 0.7
        assert abs(r.outputs[0].sum() - 1.0) < 1e-12


def test_independent_accuracy_and_correlation():
    spec = SyntheticPoolSpec(n=2, k=4, accuracies=0.7, corr=0.0, seed=1)
    c = correctness(synth_stream(spec, 10_000))
    assert np.all(np.abs(c.mean(axis=0) - 0.7) < 0.02)
    assert abs(np.corrcoef(c.T)[0, 1]) < 0.05


def test_correlated_group():
    spec = SyntheticPoolSpec(n=3, k=4, accuracies=[0.7, 0.7, 0.6], groups=[0, 0, 1], corr=1.0, seed=2)
    c = correctness(synth_stream(spec, 10_000))
    assert np.corrcoef(c.T)[0, 1] > 0.95
    assert abs(np.corrcoef(c.T)[0, 2]) < 0.05


def test_synth_is_deterministic():
    spec = SyntheticPoolSpec(n=3, k=4, seed=9)
    a = [r.to_json() for r in synth_stream(spec, 30)]
    b = [r.to_json() for r in synth_stream(spec, 30)]
    assert a == b


def test_task_specialists():
    spec = SyntheticPoolSpec(n=2, k=4, accuracies={"x": [1.0, 0.0], "y": [0.0, 1.0]})
    for r in synth_stream(spec, 40):
        want = [1, 0] if r.task == "x" else [0, 1]
        assert r.correctness().tolist() == want


@pytest.mark.parametrize("kwargs", [
    dict(n=2, groups=[0, 2]),
    dict(n=2, accuracies=1.5),
    dict(n=2, k=4, conf=0.25),
    dict(n=2, accuracies=[0.5, 0.5, 0.5]),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SyntheticPoolSpec(**kwargs)


# -- costs -----------------------------------------------------------------------

def test_query_cost():
    table = CostTable([0.2, 0.5, 0.3])
    assert query_cost([1, 0, 1], table) == 0.5
    assert query_cost([1, 1, 1], table) == 0.2 + 0.5 + 0.3
    with pytest.raises(CostError):
        query_cost([1], CostTable([]))


def test_record_costs_override_table():
    rec = QueryRecord("a", "t", 2, 0, np.array([[1.0, 0.0], [0.0, 1.0]]), costs=np.array([3.0, 4.0]))
    assert record_cost(rec, [0, 1], CostTable([0.1, 0.1])) == 4.0


def test_default_cost_table():
    table = CostTable.default(10)
    assert len(table) == 10
    assert all(c >= 0 for c in table.costs)
    assert table[9] == 1.0
