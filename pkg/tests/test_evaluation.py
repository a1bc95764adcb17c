import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from smelab import evaluation as ev


def test_psnr_examples(rng):
    a = rng.uniform(size=(1, 4, 4))
    assert ev.psnr(a, a) == 100.0
    b = np.zeros((10, 10))
    assert ev.psnr(b, b + 0.1) == pytest.approx(20.0)
    c = rng.uniform(size=(1, 4, 4))
    assert ev.psnr(a, c) == ev.psnr(c, a)
    with pytest.raises(ValueError):
        ev.psnr(a, a[0])
    with pytest.raises(ValueError):
        ev.psnr(a, a, peak=0)


def test_psnr_decreases_with_noise(rng):
    img = rng.uniform(size=(3, 8, 8))
    noise = rng.normal(size=img.shape)
    vals = [ev.psnr(img, img + s * noise) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_assignment_examples():
    perm, cost = ev.linear_sum_assignment([[0, 9], [9, 0]])
    assert list(perm) == [0, 1] and cost == 0
    perm, cost = ev.linear_sum_assignment([[1, 2], [2, 1]])
    assert list(perm) == [0, 1] and cost == 2
    perm, cost = ev.linear_sum_assignment([[5, 1], [1, 5]])
    assert list(perm) == [1, 0] and cost == 2
    with pytest.raises(ValueError):
        ev.linear_sum_assignment(np.ones((2, 3)))
    with pytest.raises(ValueError):
        ev.linear_sum_assignment([[0, np.inf], [1, 0]])
    assert ev.linear_sum_assignment(np.zeros((0, 0)))[1] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-100, 100))))
def test_assignment_matches_brute_force(cost):
    perm, total = ev.linear_sum_assignment(cost)
    n = cost.shape[0]
    assert sorted(perm) == list(range(n))
    best = min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
    assert total == pytest.approx(best, abs=1e-9)


def test_pairing_inverts_shuffle(rng):
    orig = rng.uniform(size=(5, 1, 4, 4))
    shuffle = rng.permutation(5)
    rep = ev.pair_and_score(orig[shuffle], orig)
    assert rep.mean_psnr == 100.0
    assert np.array_equal(rep.permutation, shuffle)
    one = ev.pair_and_score(orig[:1] * 0.5, orig[:1])
    assert list(one.permutation) == [0]
    with pytest.raises(ValueError):
        ev.pair_and_score(orig[:2], orig[:3])


def test_pairing_beats_identity_and_is_order_invariant(rng):
    for _ in range(20):
        rec, org = rng.uniform(size=(2, 4, 1, 3, 3))
        rep = ev.pair_and_score(rec, org)
        ident = np.mean([ev.psnr(r, o) for r, o in zip(rec, org)])
        assert rep.mean_psnr >= ident - 1e-12
        assert rep.mean_psnr == pytest.approx(np.mean(rep.psnrs))
        perm = rng.permutation(4)
        assert ev.pair_and_score(rec[perm], org).mean_psnr == pytest.approx(rep.mean_psnr)
