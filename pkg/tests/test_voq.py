import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voqcal.voq import (PoseSet, SetScore, average_board_error, condition_number, condition_numbers, kappa_lc,
                        score_triples, voq)

from conftest import random_rotation


def _unit_rows(m):
    m = np.asarray(m, dtype=float)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _set(nl, nc=None, errors=(0.0, 0.0, 0.0)):
    nl = _unit_rows(nl)
    return PoseSet((0, 1, 2), nl, nl if nc is None else _unit_rows(nc), tuple(errors))


def test_identity_is_three_exactly():
    assert condition_number(np.eye(3)) == 3.0


def test_diag_example_matches_hand_evaluation():
    # ||diag(2,1,1)||_F = sqrt(6); ||diag(0.5,1,1)||_F = 1.5
    assert condition_number(np.diag([2.0, 1, 1])) == pytest.approx(1.5 * math.sqrt(6), rel=1e-14)
    assert condition_number(np.diag([2.0, 1, 1])) == pytest.approx(3.6742, abs=1e-4)


def test_singular_is_infinite():
    assert condition_number([[1, 0, 0], [1, 0, 0], [0, 0, 1.0]]) == math.inf
    assert condition_number(np.zeros((3, 3))) == math.inf


@settings(max_examples=200)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=9, max_size=9),
       st.floats(1e-3, 1e3).flatmap(lambda a: st.sampled_from([a, -a])))
def test_scale_invariance(vals, alpha):
    n = np.array(vals).reshape(3, 3)
    k = condition_number(n)
    ka = condition_number(alpha * n)
    if math.isinf(k) or k > 1e8:
        return
    assert ka == pytest.approx(k, rel=1e-9)


@settings(max_examples=200)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=9, max_size=9))
def test_lower_bound_three(vals):
    k = condition_number(np.array(vals).reshape(3, 3))
    assert k >= 3.0 - 1e-12


def test_rotation_invariance():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = rng.normal(size=(3, 3))
        r = random_rotation(rng)
        assert condition_number(n @ r) == pytest.approx(condition_number(n), rel=1e-9)
        assert condition_number(r @ n) == pytest.approx(condition_number(n), rel=1e-9)


def test_parallel_family_diverges_monotonically():
    base = np.array([1.0, 0.0, 0.0])
    kappas = []
    for eps in [0.5, 0.2, 0.1, 0.05, 0.01, 1e-3, 1e-4, 1e-6]:
        n = _unit_rows([base, base + [0, eps, 0], base + [0, 0, eps]])
        kappas.append(condition_number(n))
    assert all(b > a for a, b in zip(kappas, kappas[1:]))
    assert kappas[-1] > 1e6
    assert condition_number(_unit_rows([base, base, base])) == math.inf


def test_stack_matches_scalar():
    rng = np.random.default_rng(1)
    stack = rng.normal(size=(100, 3, 3))
    stack[7] = [[1, 2, 3], [2, 4, 6], [0, 0, 1]]
    ks = condition_numbers(stack)
    for m, k in zip(stack, ks):
        assert condition_number(m) == k
    assert math.isinf(ks[7])


def test_kappa_lc_is_the_worse_sensor():
    nc = np.eye(3)
    nl = _unit_rows([[1, 0, 0], [1, 0.3, 0], [0, 0, 1]])
    s = _set(nl, nc)
    assert kappa_lc(s) == max(condition_number(nl), 3.0)
    assert kappa_lc(_set(np.eye(3))) == 3.0
    s_inf = _set(np.eye(3), [[1, 0, 0], [1, 0, 0], [0, 1, 0]])
    assert kappa_lc(s_inf) == math.inf


@pytest.mark.parametrize("errors, expected", [((0, 0, 0), 0.0), ((23, 20, 17), 20.0), ((4.5, 4.5, 4.5), 4.5)])
def test_average_board_error(errors, expected):
    assert average_board_error(_set(np.eye(3), errors=errors)) == pytest.approx(expected, abs=1e-12)


def test_voq_is_sum():
    # kappa_LC of exactly 20 is awkward to hit with unit rows, so check the sum on a generic set
    nl = _unit_rows([[1, 0, 0], [0.9, 0.3, 0.1], [0.2, 0.1, 1]])
    s = _set(nl, errors=(6.21, 6.21, 6.21))
    score = voq(s)
    assert score.voq == pytest.approx(score.kappa_LC + 6.21, abs=1e-12)
    assert SetScore((0, 1, 2), 20.0, 7.0, 20.0, 6.21, 20.0 + 6.21).voq == pytest.approx(26.21)


def test_voq_identity_zero_error_is_three():
    assert voq(_set(np.eye(3))).voq == 3.0


def test_infinite_voq_ranks_last():
    good = voq(_set(np.eye(3), errors=(500, 500, 500)))
    bad = voq(_set([[1, 0, 0], [1, 0, 0], [0, 1, 0]], [[1, 0, 0], [0, 1, 0], [0, 0, 1]]))
    assert not bad.finite and math.isinf(bad.voq)
    assert sorted([bad, good], key=SetScore.sort_key)[0] is good


def test_board_weight():
    s = _set(np.eye(3), errors=(10, 10, 10))
    assert voq(s, board_weight=0.5).voq == pytest.approx(8.0)


def test_pose_set_validation():
    with pytest.raises(ValueError):
        PoseSet((0, 0, 1), np.eye(3), np.eye(3), (0, 0, 0))
    with pytest.raises(ValueError, match="unit"):
        PoseSet((0, 1, 2), 2 * np.eye(3), np.eye(3), (0, 0, 0))


def test_score_triples_matches_per_set_voq():
    rng = np.random.default_rng(2)
    nl = _unit_rows(rng.normal(size=(8, 3)))
    nc = _unit_rows(rng.normal(size=(8, 3)))
    e = rng.uniform(0, 50, 8)
    triples = np.array(list(itertools.combinations(range(8), 3)))
    rows = score_triples(triples, nl, nc, e, 0.7)
    for t, row in zip(triples, rows):
        s = voq(PoseSet(tuple(t), nl[t], nc[t], tuple(e[t])), 0.7)
        np.testing.assert_allclose(row, [s.kappa_L, s.kappa_C, s.kappa_LC, s.e_be, s.voq], rtol=1e-15)
