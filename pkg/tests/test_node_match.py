import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gmn.embed import ShapeError
from gmn.node_match import (
    masked_softmax,
    match_backward,
    match_forward,
    node_relevance,
    normalize_dual,
    propagate_items_to_videos,
    propagate_videos_to_items,
    softmax_backward,
)
from oracles import bilinear, cross, dual_softmax


def test_orthogonal_under_identity():
    assert node_relevance([[1, 0]], [[0, 1]], np.eye(2))[0, 0] == 0.0


def test_swap_metric():
    assert node_relevance([[1, 0]], [[0, 1]], np.array([[0, 1], [1, 0]]))[0, 0] == 1.0


def test_bilinear_matches_triple_loop():
    rng = np.random.default_rng(0)
    xv, xi, m = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal((4, 4))
    got = node_relevance(xv, xi, m)
    want = [[bilinear(a, m, b) for b in xi] for a in xv]
    assert np.allclose(got, want, atol=1e-12)


def test_width_mismatch():
    with pytest.raises(ShapeError):
        node_relevance(np.ones((2, 3)), np.ones((2, 3)), np.eye(2))


def test_uniform_row():
    rel = normalize_dual(np.zeros((1, 2)))
    assert rel.row_norm.tolist() == [[0.5, 0.5]]


def test_ln2_row():
    rel = normalize_dual(np.array([[math.log(2), 0.0]]))
    assert np.allclose(rel.row_norm, [[2 / 3, 1 / 3]], atol=1e-15)


@pytest.mark.parametrize("value", [-50.0, 0.0, 3.7, 800.0])
def test_singleton_softmax(value):
    rel = normalize_dual(np.array([[value]]))
    assert rel.row_norm.tolist() == [[1.0]] and rel.col_norm.tolist() == [[1.0]]


def test_empty_axis_gives_empty_normalisation():
    rel = normalize_dual(np.zeros((3, 0)))
    assert rel.row_norm.shape == (3, 0) and rel.col_norm.shape == (3, 0)


def test_single_pair_propagation():
    xv, xi = np.array([[1.0, 2.0]]), np.array([[5.0, 6.0]])
    rel = normalize_dual(node_relevance(xv, xi, np.eye(2)))
    assert propagate_items_to_videos(xv, xi, rel).tolist() == [[1, 2, 5, 6]]
    assert propagate_videos_to_items(xv, xi, rel).tolist() == [[5, 6, 1, 2]]


def test_identical_items_aggregate_to_that_item():
    rng = np.random.default_rng(1)
    xv = rng.standard_normal((3, 2))
    xi = np.array([[0.3, -0.4], [0.3, -0.4]])
    rel = normalize_dual(rng.standard_normal((3, 2)) * 5)
    hv = propagate_items_to_videos(xv, xi, rel)
    assert np.allclose(hv[:, 2:], xi[0], atol=1e-15)


def test_identical_videos_aggregate_to_that_video():
    rng = np.random.default_rng(1)
    xi = rng.standard_normal((3, 2))
    xv = np.array([[0.1, 0.9], [0.1, 0.9]])
    rel = normalize_dual(rng.standard_normal((2, 3)) * 5)
    hi = propagate_videos_to_items(xv, xi, rel)
    assert np.allclose(hi[:, 2:], xv[0], atol=1e-15)


@pytest.mark.parametrize("shape", [(4, 3), (3, 4)])
def test_propagation_matches_direct_sum(shape):
    rng = np.random.default_rng(2)
    xv, xi = rng.standard_normal((shape[0], 3)), rng.standard_normal((shape[1], 3))
    m = rng.standard_normal((3, 3))
    raw = node_relevance(xv, xi, m)
    rel = normalize_dual(raw)
    rows, cols = dual_softmax(raw.tolist())
    hv, hi = cross(xv.tolist(), xi.tolist(), rows, cols, 3)
    assert np.allclose(propagate_items_to_videos(xv, xi, rel), hv, atol=1e-12)
    assert np.allclose(propagate_videos_to_items(xv, xi, rel), hi, atol=1e-12)


def test_empty_side_gives_zero_half():
    xv = np.ones((2, 3))
    rel = normalize_dual(np.zeros((2, 0)))
    hv = propagate_items_to_videos(xv, np.zeros((0, 3)), rel)
    assert hv.shape == (2, 6) and not hv[:, 3:].any()
    hi = propagate_videos_to_items(np.zeros((0, 3)), xv, normalize_dual(np.zeros((0, 2))))
    assert hi.shape == (2, 6) and not hi[:, 3:].any()


def test_unit_vectors_identity_metric_give_cosines():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((3, 5))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    cos = [[float(x @ y) / (np.linalg.norm(x) * np.linalg.norm(y)) for y in b] for x in a]
    assert np.allclose(node_relevance(a, b, np.eye(5)), cos, atol=1e-12)


def test_batched_matches_per_user_with_padding():
    rng = np.random.default_rng(4)
    d = 3
    m = rng.standard_normal((d, d))
    sizes = [(2, 3), (4, 1), (0, 2), (3, 0)]
    nv, ni = 4, 3
    xv, xi = np.zeros((4, nv, d)), np.zeros((4, ni, d))
    mv, mi = np.zeros((4, nv), bool), np.zeros((4, ni), bool)
    per = []
    for b, (a, c) in enumerate(sizes):
        v, i = rng.standard_normal((a, d)), rng.standard_normal((c, d))
        xv[b, :a], xi[b, :c], mv[b, :a], mi[b, :c] = v, i, True, True
        rel = normalize_dual(node_relevance(v, i, m))
        per.append((propagate_items_to_videos(v, i, rel), propagate_videos_to_items(v, i, rel)))
    hv, hi, _ = match_forward(xv, xi, mv, mi, m)
    for b, (a, c) in enumerate(sizes):
        assert np.allclose(hv[b, :a], per[b][0], atol=1e-12)
        assert np.allclose(hi[b, :c], per[b][1], atol=1e-12)


def test_match_backward_against_finite_differences():
    rng = np.random.default_rng(5)
    xv, xi = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 2, 4))
    mv = np.array([[1, 1, 1], [1, 1, 0]], bool)
    mi = np.array([[1, 1], [1, 0]], bool)
    xv *= mv[..., None]
    xi *= mi[..., None]
    m = rng.standard_normal((4, 4))
    gv, gi = rng.standard_normal((2, 3, 8)), rng.standard_normal((2, 2, 8))

    def f(xv_, xi_, m_):
        hv, hi, _ = match_forward(xv_, xi_, mv, mi, m_)
        return float(np.sum(hv * gv * mv[..., None]) + np.sum(hi * gi * mi[..., None]))

    _, _, cache = match_forward(xv, xi, mv, mi, m)
    a_xv, a_xi, a_m = match_backward(gv * mv[..., None], gi * mi[..., None], cache)
    h = 1e-6
    for arr, grad, mask in ((xv, a_xv, mv), (xi, a_xi, mi), (m, a_m, None)):
        num = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if mask is not None and not mask[idx[:2]]:
                continue
            old = arr[idx]
            arr[idx] = old + h
            up = f(xv, xi, m)
            arr[idx] = old - h
            down = f(xv, xi, m)
            arr[idx] = old
            num[idx] = (up - down) / (2 * h)
        if mask is not None:
            grad = grad * mask[..., None]
        assert np.allclose(grad, num, atol=1e-6)


def test_softmax_backward_finite_differences():
    rng = np.random.default_rng(6)
    x, g = rng.standard_normal(5), rng.standard_normal(5)
    mask = np.ones(5, bool)
    s = masked_softmax(x, mask, 0)
    analytic = softmax_backward(s, g, 0)
    num = np.zeros(5)
    for j in range(5):
        e = np.zeros(5)
        e[j] = 1e-6
        num[j] = (g @ masked_softmax(x + e, mask, 0) - g @ masked_softmax(x - e, mask, 0)) / 2e-6
    assert np.allclose(analytic, num, atol=1e-8)


# ---------------------------------------------------------------- properties

mats = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-30, 30))


@given(mats)
def test_stochasticity(raw):
    rel = normalize_dual(raw)
    assert np.allclose(rel.row_norm.sum(1), 1.0, atol=1e-6)
    assert np.allclose(rel.col_norm.sum(0), 1.0, atol=1e-6)
    for s in (rel.row_norm, rel.col_norm):
        assert s.min() >= 0.0 and s.max() <= 1.0


@given(mats, st.floats(-50, 50))
def test_shift_invariance(raw, c):
    a, b = normalize_dual(raw), normalize_dual(raw + c)
    assert np.allclose(a.row_norm, b.row_norm, atol=1e-9)
    assert np.allclose(a.col_norm, b.col_norm, atol=1e-9)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31), st.randoms())
def test_item_permutation_equivariance(nv, ni, seed, rnd):
    rng = np.random.default_rng(seed)
    xv, xi, m = rng.standard_normal((nv, 3)), rng.standard_normal((ni, 3)), rng.standard_normal((3, 3))
    perm = list(range(ni))
    rnd.shuffle(perm)
    r1 = normalize_dual(node_relevance(xv, xi, m))
    r2 = normalize_dual(node_relevance(xv, xi[perm], m))
    assert np.allclose(r2.scores, r1.scores[:, perm], atol=1e-12)
    assert np.allclose(propagate_items_to_videos(xv, xi, r1), propagate_items_to_videos(xv, xi[perm], r2),
                       atol=1e-12)
