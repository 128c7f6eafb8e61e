"""Sliding failure history and the ensemble diversity metrics computed over it.

Masks are boolean vectors over the model pool; ``mask[i]`` is model ``i``.  The
integer encoding of a mask is ``sum(mask[i] << i)``.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels

COLD_START_ROWS = 30


class DimensionError(ValueError):
    """A vector does not match the pool size it is being used with."""


class ContractError(ValueError):
    """A precondition of a metric or operation was violated."""


def as_mask(bits, n=None):
    mask = np.asarray(bits).astype(bool).ravel()
    if n is not None and mask.shape[0] != n:
        raise DimensionError(f"mask has {mask.shape[0]} entries, pool has {n}")
    return mask


def mask_to_int(mask):
    return int(sum(1 << i for i, b in enumerate(mask) if b))


def int_to_mask(code, n):
    return np.array([(code >> i) & 1 for i in range(n)], dtype=bool)


def mask_to_str(mask):
    """Binary string of the integer encoding, model 0 is the rightmost digit."""
    return "".join("1" if b else "0" for b in reversed(list(mask)))


class FailureHistory:
    """Ring buffer of the last ``capacity`` correctness and answer rows.

    ``correct[r, i] == 1`` when model ``i`` answered query ``r`` correctly;
    ``answers[r, i]`` is the choice index it picked.  Rows are kept in arrival
    order when read through :meth:`failures` / :meth:`answer_rows`.
    """

    def __init__(self, capacity, n_models):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.n_models = int(n_models)
        self._correct = np.zeros((self.capacity, self.n_models), dtype=np.uint8)
        self._fail = np.zeros((self.capacity, self.n_models), dtype=np.uint8)
        self._answers = np.zeros((self.capacity, self.n_models), dtype=np.int64)
        self._start = 0
        self.len = 0
        self.pushes = 0

    def __len__(self):
        return self.len

    def push(self, correctness, answers):
        c = np.asarray(correctness).ravel()
        a = np.asarray(answers).ravel()
        if c.shape[0] != self.n_models or a.shape[0] != self.n_models:
            raise DimensionError(
                f"expected vectors of length {self.n_models}, got {c.shape[0]} and {a.shape[0]}"
            )
        if self.len < self.capacity:
            slot = (self._start + self.len) % self.capacity
            self.len += 1
        else:
            slot = self._start
            self._start = (self._start + 1) % self.capacity
        self._correct[slot] = c != 0
        self._fail[slot] = 1 - self._correct[slot]
        self._answers[slot] = a.astype(np.int64)
        self.pushes += 1
        return self

    def _ordered(self, buf):
        idx = (self._start + np.arange(self.len)) % self.capacity
        return buf[idx]

    def correct_rows(self):
        return self._ordered(self._correct)

    def _raw_failures(self):
        # metrics are order-invariant, so skip the reorder copy
        return self._fail[: self.len]

    def _raw_answers(self):
        return self._answers[: self.len]

    def failures(self):
        """(len, N) uint8 matrix, 1 where the model failed."""
        return self._ordered(self._fail)

    def answer_rows(self):
        return self._ordered(self._answers)

    @property
    def cold(self):
        return self.len < COLD_START_ROWS

    def accuracy(self):
        if self.len == 0:
            return np.zeros(self.n_models)
        return self._correct[: self.len].mean(axis=0)

    def snapshot(self):
        return {
            "capacity": self.capacity,
            "n_models": self.n_models,
            "pushes": self.pushes,
            "correct": self.correct_rows().tolist(),
            "answers": self.answer_rows().tolist(),
        }

    @classmethod
    def from_snapshot(cls, snap):
        hist = cls(snap["capacity"], snap["n_models"])
        for c, a in zip(snap["correct"], snap["answers"]):
            hist.push(c, a)
        hist.pushes = snap.get("pushes", hist.pushes)
        return hist

    @classmethod
    def from_rows(cls, correct, answers, capacity=None):
        correct = np.asarray(correct)
        hist = cls(capacity or max(1, correct.shape[0]), correct.shape[1])
        for c, a in zip(correct, np.asarray(answers)):
            hist.push(c, a)
        return hist


@dataclass
class FocalScores:
    rho: np.ndarray
    lam: float
    undefined: np.ndarray  # True where the focal model never failed and 1.0 was substituted


def _members(mask, n):
    mask = as_mask(mask, n)
    return np.flatnonzero(mask).astype(np.int64)


def focal_negative_correlation(history, mask, focal):
    """rho for one focal member of ``mask``; ``None`` if the focal model never failed."""
    members = _members(mask, history.n_models)
    if focal not in members:
        raise ContractError(f"focal model {focal} is not in the ensemble")
    if members.shape[0] < 2:
        raise ContractError("focal negative correlation needs at least two members")
    if history.len == 0:
        raise ContractError("history is empty")
    rho, undefined = kernels.focal_rho(history._raw_failures(), members)
    pos = int(np.searchsorted(members, focal))
    return None if undefined[pos] else float(rho[pos])


def focal_diversity(history, mask):
    members = _members(mask, history.n_models)
    m = members.shape[0]
    if m < 2:
        raise ContractError("focal diversity needs at least two members")
    if history.len == 0:
        raise ContractError("history is empty")
    rho, undefined = kernels.focal_rho(history._raw_failures(), members)
    return FocalScores(rho=rho, lam=float(np.mean(rho)), undefined=undefined)


def fleiss_kappa_from_counts(counts):
    """Fleiss' kappa of an (items, categories) matrix of rater counts."""
    counts = np.asarray(counts, dtype=np.float64)
    n_items = counts.shape[0]
    raters = counts[0].sum()
    p_item = (np.sum(counts * counts, axis=1) - raters) / (raters * (raters - 1))
    p_bar = p_item.mean()
    p_cat = counts.sum(axis=0) / (n_items * raters)
    p_e = float(np.sum(p_cat * p_cat))
    if p_e == 1.0:
        return 1.0
    return float((p_bar - p_e) / (1.0 - p_e))


def fleiss_kappa(history, mask, k):
    members = _members(mask, history.n_models)
    if members.shape[0] < 2:
        raise ContractError("kappa needs at least two raters")
    if history.len == 0:
        raise ContractError("history is empty")
    return float(kernels.kappa(history._raw_answers(), members, int(k)))


def team_features(history, members, k):
    """(focal diversity, Fleiss kappa) of the team given by sorted int64 ``members``.

    Degenerate teams get fixed values instead of raising: a singleton has
    diversity 0 and kappa 1; an empty history gives diversity 1 and kappa 0.
    """
    if members.shape[0] < 2:
        return 0.0, 1.0
    if history.len == 0:
        return 1.0, 0.0
    rho, _ = kernels.focal_rho(history._raw_failures(), members)
    return float(np.mean(rho)), float(kernels.kappa(history._raw_answers(), members, int(k)))


def enumerate_teams(n, min_size=2):
    """Every mask with at least ``min_size`` members, ascending by integer encoding."""
    if n < 2:
        raise ContractError("pool must contain at least two models")
    for code in range(1, 1 << n):
        if bin(code).count("1") >= min_size:
            yield int_to_mask(code, n)
