"""Counting kernels shared by the diversity metrics and the voting baselines.

Inputs are plain arrays: ``fail`` / ``answers`` are (rows, N) matrices,
``members`` an int64 vector of selected model indices, ``outputs`` an (R, N, k)
stack of probability vectors.  Row order never matters.

Every kernel exists twice: a loop version compiled by numba and a vectorised
numpy version. ``cofail_histogram``, ``vote_counts`` and ``plurality_votes`` are
bound to whichever one ``_accel.USE_NUMBA`` selects; both variants stay importable
so tests and benchmarks can compare them directly.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


def _cofail_histogram_loop(fail, members):
    n_rows = fail.shape[0]
    m = members.shape[0]
    out = np.zeros((m, m + 1), dtype=np.int64)
    for r in range(n_rows):
        j = 0
        for a in range(m):
            j += fail[r, members[a]]
        if j == 0:
            continue
        for a in range(m):
            if fail[r, members[a]]:
                out[a, j] += 1
    return out


def _cofail_histogram_numpy(fail, members):
    m = members.shape[0]
    sub = fail[:, members].astype(np.int64)
    j = sub.sum(axis=1)
    onehot = np.zeros((sub.shape[0], m + 1), dtype=np.int64)
    onehot[np.arange(sub.shape[0]), j] = 1
    return sub.T @ onehot


def _focal_rho_loop(fail, members):
    m = members.shape[0]
    hist = np.zeros((m, m + 1), dtype=np.int64)
    for r in range(fail.shape[0]):
        j = 0
        for a in range(m):
            j += fail[r, members[a]]
        for a in range(m):
            if fail[r, members[a]]:
                hist[a, j] += 1
    rho = np.ones(m)
    undefined = np.zeros(m, dtype=np.bool_)
    for a in range(m):
        total = 0
        for j in range(m + 1):
            total += hist[a, j]
        if total == 0:
            undefined[a] = True
            continue
        p1 = 0.0
        p2 = 0.0
        for j in range(1, m + 1):
            p_j = hist[a, j] / total
            p1 += j / m * p_j
            p2 += j * (j - 1) / (m * (m - 1)) * p_j
        rho[a] = 1.0 - p2 / p1
    return rho, undefined


def _focal_rho_numpy(fail, members):
    m = members.shape[0]
    hist = _cofail_histogram_numpy(fail, members).astype(np.float64)
    total = hist.sum(axis=1)
    undefined = total == 0
    p = hist / np.where(undefined, 1.0, total)[:, None]
    j = np.arange(m + 1, dtype=np.float64)
    p1 = p @ (j / m)
    p2 = p @ (j * (j - 1) / (m * (m - 1)))
    rho = np.where(undefined, 1.0, 1.0 - p2 / np.where(undefined, 1.0, p1))
    return rho, undefined


def _vote_counts_loop(answers, members, k):
    n_rows = answers.shape[0]
    out = np.zeros((n_rows, k), dtype=np.int64)
    for r in range(n_rows):
        for a in range(members.shape[0]):
            out[r, answers[r, members[a]]] += 1
    return out


def _vote_counts_numpy(answers, members, k):
    sub = answers[:, members]
    return (sub[:, :, None] == np.arange(k)[None, None, :]).sum(axis=1).astype(np.int64)


def _kappa_loop(answers, members, k):
    n_items = answers.shape[0]
    raters = members.shape[0]
    counts = np.zeros((n_items, k), dtype=np.int64)
    for r in range(n_items):
        for a in range(raters):
            counts[r, answers[r, members[a]]] += 1
    p_bar = 0.0
    for r in range(n_items):
        sq = 0
        for c in range(k):
            sq += counts[r, c] * counts[r, c]
        p_bar += (sq - raters) / (raters * (raters - 1))
    p_bar /= n_items
    p_e = 0.0
    for c in range(k):
        col = 0
        for r in range(n_items):
            col += counts[r, c]
        share = col / (n_items * raters)
        p_e += share * share
    if p_e == 1.0:
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


def _kappa_numpy(answers, members, k):
    counts = _vote_counts_numpy(answers, members, k)
    n_items = counts.shape[0]
    raters = members.shape[0]
    p_bar = np.mean((np.sum(counts * counts, axis=1) - raters) / (raters * (raters - 1)))
    share = counts.sum(axis=0) / (n_items * raters)
    p_e = float(np.sum(share * share))
    if p_e == 1.0:
        return 1.0
    return float((p_bar - p_e) / (1.0 - p_e))


def _plurality_loop(outputs, members):
    n_rec = outputs.shape[0]
    k = outputs.shape[2]
    preds = np.empty(n_rec, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    mass = np.zeros(k)
    for r in range(n_rec):
        counts[:] = 0
        mass[:] = 0.0
        for a in range(members.shape[0]):
            i = members[a]
            best_c = 0
            for c in range(1, k):
                if outputs[r, i, c] > outputs[r, i, best_c]:
                    best_c = c
            counts[best_c] += 1
            for c in range(k):
                mass[c] += outputs[r, i, c]
        choice = 0
        for c in range(1, k):
            if counts[c] > counts[choice] or (counts[c] == counts[choice] and mass[c] > mass[choice]):
                choice = c
        preds[r] = choice
    return preds


def _plurality_numpy(outputs, members):
    n_rec, _, k = outputs.shape
    votes = np.argmax(outputs[:, members, :], axis=2)
    counts = np.zeros((n_rec, k), dtype=np.int64)
    mass = np.zeros((n_rec, k))
    rows = np.arange(n_rec)
    for a, i in enumerate(members):
        counts[rows, votes[:, a]] += 1
        mass += outputs[:, i, :]
    tied = counts == counts.max(axis=1, keepdims=True)
    return np.argmax(np.where(tied, mass, -np.inf), axis=1).astype(np.int64)


cofail_histogram_numba = njit(_cofail_histogram_loop)
focal_rho_numba = njit(_focal_rho_loop)
vote_counts_numba = njit(_vote_counts_loop)
kappa_numba = njit(_kappa_loop)
plurality_numba = njit(_plurality_loop)

cofail_histogram_numpy = _cofail_histogram_numpy
focal_rho_numpy = _focal_rho_numpy
vote_counts_numpy = _vote_counts_numpy
kappa_numpy = _kappa_numpy
plurality_numpy = _plurality_numpy

if USE_NUMBA:
    cofail_histogram = cofail_histogram_numba
    focal_rho = focal_rho_numba
    vote_counts = vote_counts_numba
    kappa = kappa_numba
    plurality_votes = plurality_numba
else:
    cofail_histogram = cofail_histogram_numpy
    focal_rho = focal_rho_numpy
    vote_counts = vote_counts_numpy
    kappa = kappa_numpy
    plurality_votes = plurality_numpy
