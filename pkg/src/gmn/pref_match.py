"""Preference-level modelling: soft pooling into k preferences, matching, compression.

Pooling assigns every node to k learnable centroids with a softmax over
``node . centroid / temperature`` and takes the assignment-weighted mean of the
nodes per centroid. With k = 1 the assignment is identically one and pooling is
the plain mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import ShapeError
from .node_match import match_backward, match_forward, normalize_dual
from .params import GMNConfig, ParamStore


@dataclass(frozen=True)
class PreferenceGraph:
    prefs: np.ndarray
    side: str
    level: int = 0
    empty: bool = False

    @property
    def k(self) -> int:
        return self.prefs.shape[0]


@dataclass(frozen=True)
class AssignmentMatrix:
    S: np.ndarray


# ---------------------------------------------------------------- batched ops


def pool_forward(h, mask, centroids, temperature):
    """Pool ``h`` (B, N, w) into (B, k, w). Rows of an all-masked sample come out zero."""
    logits = h @ centroids.T / temperature
    logits = logits - logits.max(axis=-1, keepdims=True)
    a0 = np.exp(logits)
    a0 /= a0.sum(axis=-1, keepdims=True)
    a = a0 * mask[..., None]
    mass = a.sum(axis=1)
    u = a.transpose(0, 2, 1) @ h
    ok = mass > 0
    inv = np.divide(1.0, mass, out=np.zeros_like(mass), where=ok)
    z = u * inv[..., None]
    return z, (h, mask, centroids, temperature, a0, a, inv, z)


def pool_backward(g_z, cache):
    h, mask, centroids, temperature, a0, a, inv, z = cache
    g_u = g_z * inv[..., None]
    g_mass = -np.sum(g_z * z, axis=-1) * inv
    g_a = h @ g_u.transpose(0, 2, 1) + g_mass[:, None, :]
    g_h = a @ g_u
    g_a *= mask[..., None]
    g_logits = a0 * (g_a - np.sum(g_a * a0, axis=-1, keepdims=True)) / temperature
    g_h += g_logits @ centroids
    k, w = centroids.shape
    g_c = g_logits.reshape(-1, k).T @ h.reshape(-1, w)
    return g_h, g_c


def masked_mean(h, mask):
    count = mask.sum(axis=1).astype(np.float64)
    inv = np.divide(1.0, count, out=np.zeros_like(count), where=count > 0)
    return (h * mask[..., None]).sum(axis=1) * inv[:, None], inv


def compress_forward(hv, hi, mv, mi, p: ParamStore, config: GMNConfig):
    """Run the pooling/matching rounds and reduce each side to one vector.

    Returns ``(e_uv, e_ui, cache)``, each of width ``config.pref_width``. With
    preference matching disabled the two sides are plain masked means of the
    node-level embeddings, zero-padded to the same width.
    """
    width = config.pref_width
    if not config.pref_matching:
        ev, inv_v = masked_mean(hv, mv)
        ei, inv_i = masked_mean(hi, mi)
        pad = np.zeros((hv.shape[0], width - hv.shape[-1]))
        cache = ("mean", mv, mi, inv_v, inv_i, hv.shape[-1])
        return np.concatenate([ev, pad], 1), np.concatenate([ei, pad], 1), cache

    rounds = []
    cur_v, cur_mv, cur_i, cur_mi = hv, mv, hi, mi
    for r, (kv, ki) in enumerate(zip(config.ks(config.k1), config.ks(config.k2))):
        zv, pc_v = pool_forward(cur_v, cur_mv, p[f"centroids/video/{r}"], config.temperature)
        zi, pc_i = pool_forward(cur_i, cur_mi, p[f"centroids/item/{r}"], config.temperature)
        pmv = np.repeat(cur_mv.any(axis=1)[:, None], kv, axis=1)
        pmi = np.repeat(cur_mi.any(axis=1)[:, None], ki, axis=1)
        ev, ei, mc = match_forward(zv, zi, pmv, pmi)
        rounds.append((pc_v, pc_i, mc, zv, zi))
        cur_v, cur_mv, cur_i, cur_mi = ev, pmv, ei, pmi
    ev, inv_v = masked_mean(cur_v, cur_mv)
    ei, inv_i = masked_mean(cur_i, cur_mi)
    cache = ("rounds", rounds, cur_mv, cur_mi, inv_v, inv_i, cur_v.shape[1], cur_i.shape[1])
    return ev, ei, cache


def compress_backward(g_ev, g_ei, cache, p: ParamStore):
    """Returns ``(g_hv, g_hi)`` and accumulates centroid gradients into ``p``."""
    if cache[0] == "mean":
        _, mv, mi, inv_v, inv_i, w = cache
        g_hv = (g_ev[:, None, :w] * inv_v[:, None, None]) * mv[..., None]
        g_hi = (g_ei[:, None, :w] * inv_i[:, None, None]) * mi[..., None]
        return g_hv, g_hi
    _, rounds, mv, mi, inv_v, inv_i, nv, ni = cache
    g_cur_v = np.repeat((g_ev * inv_v[:, None])[:, None, :], nv, axis=1) * mv[..., None]
    g_cur_i = np.repeat((g_ei * inv_i[:, None])[:, None, :], ni, axis=1) * mi[..., None]
    for r in range(len(rounds) - 1, -1, -1):
        pc_v, pc_i, mc, _, _ = rounds[r]
        g_zv, g_zi, _ = match_backward(g_cur_v, g_cur_i, mc)
        g_cur_v, g_cv = pool_backward(g_zv, pc_v)
        g_cur_i, g_ci = pool_backward(g_zi, pc_i)
        p.grads[f"centroids/video/{r}"] += g_cv
        p.grads[f"centroids/item/{r}"] += g_ci
    return g_cur_v, g_cur_i


def preference_relevance_of(cache):
    """Raw and normalised first-round preference relevance from a compress cache."""
    if cache[0] != "rounds":
        return None
    _, _, mc, _, _ = cache[1][0]
    _, _, _, _, raw, row, col = mc
    return raw, row, col


# ---------------------------------------------------------------- per-user API


def pool(embeddings, centroids, temperature: float = 1.0, side: str = "video", level: int = 0):
    """Pool one neighborhood into ``k`` preferences.

    An empty neighborhood yields the empty-side sentinel: k zero preferences and
    an empty assignment.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    centroids = np.asarray(centroids, dtype=np.float64)
    k, w = centroids.shape
    h = np.asarray(embeddings, dtype=np.float64).reshape(-1, w) if len(embeddings) else np.zeros((0, w))
    if len(h) == 0:
        return PreferenceGraph(np.zeros((k, w)), side, level, empty=True), AssignmentMatrix(np.zeros((0, k)))
    z, cache = pool_forward(h[None], np.ones((1, len(h)), dtype=bool), centroids, temperature)
    return PreferenceGraph(z[0], side, level), AssignmentMatrix(cache[5][0])


def _prefs(z) -> np.ndarray:
    return z.prefs if isinstance(z, PreferenceGraph) else np.asarray(z, dtype=np.float64)


def pref_relevance(zv, zi) -> np.ndarray:
    """Inner product between every video preference and every item preference."""
    a, b = _prefs(zv), _prefs(zi)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"preference widths differ: {a.shape[-1]} vs {b.shape[-1]}")
    return a @ b.T


def pref_propagate(zv, zi, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = _prefs(zv), _prefs(zi)
    rel = normalize_dual(p)
    ev = np.concatenate([a, rel.row_norm @ b], axis=1)
    ei = np.concatenate([b, rel.col_norm.T @ a], axis=1)
    return ev, ei


def compress(hv, hi, p: ParamStore, config: GMNConfig) -> tuple[np.ndarray, np.ndarray]:
    """Single-user version of :func:`compress_forward`."""
    w = config.node_width
    hv = np.asarray(hv, dtype=np.float64).reshape(-1, w)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1, w)
    nv, ni = max(len(hv), 1), max(len(hi), 1)
    bv, bi = np.zeros((1, nv, w)), np.zeros((1, ni, w))
    bv[0, : len(hv)], bi[0, : len(hi)] = hv, hi
    mv = np.arange(nv)[None] < len(hv)
    mi = np.arange(ni)[None] < len(hi)
    ev, ei, _ = compress_forward(bv, bi, mv, mi, p, config)
    return ev[0], ei[0]
