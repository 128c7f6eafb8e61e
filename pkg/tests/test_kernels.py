"""The numba and numpy paths must agree; the env flag must select numpy."""
import os
import subprocess
import sys

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from marlfocal import kernels
from oracles import plurality_oracle


@st.composite
def matrices(draw, k=4):
    n = draw(st.integers(2, 6))
    t = draw(st.integers(1, 25))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    size = draw(st.integers(1, n))
    members = np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)
    fail = (rng.random((t, n)) < draw(st.floats(0.0, 1.0))).astype(np.uint8)
    answers = rng.integers(0, k, size=(t, n)).astype(np.int64)
    # coarse values make exact argmax and mass ties common
    outputs = rng.integers(0, 4, size=(t, n, k)).astype(np.float64)
    outputs[outputs.sum(axis=2) == 0] = 1.0
    outputs /= outputs.sum(axis=2, keepdims=True)
    return fail, answers, outputs, members, k


@settings(max_examples=150, deadline=None)
@given(matrices())
def test_histogram_paths_agree(case):
    fail, _, _, members, _ = case
    assert np.array_equal(kernels.cofail_histogram_numba(fail, members), kernels.cofail_histogram_numpy(fail, members))


@settings(max_examples=150, deadline=None)
@given(matrices())
def test_rho_paths_agree(case):
    fail, _, _, members, _ = case
    if members.shape[0] < 2:
        return
    r1, u1 = kernels.focal_rho_numba(fail, members)
    r2, u2 = kernels.focal_rho_numpy(fail, members)
    assert np.array_equal(u1, u2)
    assert np.max(np.abs(r1 - r2)) < 1e-12


@settings(max_examples=150, deadline=None)
@given(matrices())
def test_vote_and_kappa_paths_agree(case):
    _, answers, _, members, k = case
    assert np.array_equal(kernels.vote_counts_numba(answers, members, k), kernels.vote_counts_numpy(answers, members, k))
    if members.shape[0] >= 2:
        assert abs(kernels.kappa_numba(answers, members, k) - kernels.kappa_numpy(answers, members, k)) < 1e-12


@settings(max_examples=150, deadline=None)
@given(matrices())
def test_plurality_paths_agree_with_oracle(case):
    _, _, outputs, members, _ = case
    fast = kernels.plurality_numba(outputs, members)
    slow = kernels.plurality_numpy(outputs, members)
    assert np.array_equal(fast, slow)
    want = [plurality_oracle(q.tolist(), members.tolist()) for q in outputs]
    assert fast.tolist() == want


def test_env_flag_selects_numpy():
    code = "import marlfocal.kernels as k, marlfocal._accel as a; print(a.backend_name(), k.focal_rho is k.focal_rho_numpy)"
    env = dict(os.environ, MARLFOCAL_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
    env.pop("MARLFOCAL_NO_NUMBA")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numba", "False"]
