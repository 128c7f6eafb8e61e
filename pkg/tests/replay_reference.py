"""Standalone baseline scorer for a JSONL file of recorded model outputs.

Deliberately written against the raw JSON with the standard library only, so it
can audit the package's ``eval`` numbers without sharing any of its code.

    python3 replay_reference.py data.jsonl
"""
import json
import sys


def argmax(xs):
    best = 0
    for i in range(1, len(xs)):
        if xs[i] > xs[best]:
            best = i
    return best


def majority(outputs):
    votes = {}
    mass = {}
    for probs in outputs:
        c = argmax(probs)
        votes[c] = votes.get(c, 0) + 1
    for probs in outputs:
        for c in votes:
            mass[c] = mass.get(c, 0.0) + probs[c]
    return min(votes, key=lambda c: (-votes[c], -mass[c], c))


def score(path):
    rows = [json.loads(line) for line in open(path) if line.strip()]
    n = len(rows[0]["outputs"])
    single = [0] * n
    vote = 0
    for row in rows:
        for i, probs in enumerate(row["outputs"]):
            single[i] += argmax(probs) == row["gold"]
        vote += majority(row["outputs"]) == row["gold"]
    out = {f"model-{i}": 100.0 * single[i] / len(rows) for i in range(n)}
    out["plurality-all"] = 100.0 * vote / len(rows)
    return out


if __name__ == "__main__":
    print(json.dumps(score(sys.argv[1]), indent=2))
