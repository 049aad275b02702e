"""Node-level graph matching between a user's video and item neighborhoods.

Relevance between video a and item b is the bilinear form ``xv_a^T M xi_b``.
It is normalised twice, over items for each video (``row_norm``) and over videos
for each item (``col_norm``), and each side then receives the other side's
embeddings weighted by those scores.

The batched ``match_forward``/``match_backward`` pair works on padded
``(batch, nodes, width)`` tensors with boolean masks and is reused at the
preference level with no metric matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import ShapeError


def masked_softmax(x: np.ndarray, mask: np.ndarray, axis: int) -> np.ndarray:
    """Softmax along ``axis`` over entries where ``mask`` is true; fully masked slices give zeros."""
    x = np.where(mask, x, -np.inf)
    top = np.max(x, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(x - top), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    return np.divide(e, total, out=np.zeros_like(e), where=total > 0)


def softmax_backward(s: np.ndarray, grad: np.ndarray, axis: int) -> np.ndarray:
    return s * (grad - np.sum(grad * s, axis=axis, keepdims=True))


@dataclass(frozen=True)
class RelevanceMatrix:
    scores: np.ndarray
    row_norm: np.ndarray
    col_norm: np.ndarray


def _as_matrix(vectors, name: str) -> np.ndarray:
    a = np.asarray(vectors, dtype=np.float64)
    if a.size == 0:
        return a.reshape(0, a.shape[-1] if a.ndim == 2 else 0)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a list of equal-width vectors")
    return a


def node_relevance(xv, xi, m: np.ndarray) -> np.ndarray:
    """Raw scores ``scores[a, b] = xv[a] . M . xi[b]``."""
    xv, xi = _as_matrix(xv, "xv"), _as_matrix(xi, "xi")
    m = np.asarray(m, dtype=np.float64)
    if (xv.size and xv.shape[1] != m.shape[0]) or (xi.size and xi.shape[1] != m.shape[1]):
        raise ShapeError(f"embedding widths {xv.shape[-1]}, {xi.shape[-1]} do not fit metric {m.shape}")
    if xv.size == 0 or xi.size == 0:
        return np.zeros((len(xv), len(xi)))
    return xv @ m @ xi.T


def normalize_dual(raw: np.ndarray) -> RelevanceMatrix:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        empty = np.zeros(raw.shape)
        return RelevanceMatrix(raw, empty, empty.copy())
    if not np.all(np.isfinite(raw)):
        raise ValueError("relevance scores must be finite")
    mask = np.ones(raw.shape, dtype=bool)
    return RelevanceMatrix(raw, masked_softmax(raw, mask, 1), masked_softmax(raw, mask, 0))


def propagate_items_to_videos(xv, xi, rel: RelevanceMatrix) -> np.ndarray:
    """Enriched video embeddings ``concat(xv_a, sum_b row_norm[a, b] * xi_b)``."""
    xv, xi = _as_matrix(xv, "xv"), _as_matrix(xi, "xi")
    if len(xi) == 0:
        return np.concatenate([xv, np.zeros_like(xv)], axis=1)
    if rel.row_norm.shape != (len(xv), len(xi)):
        raise ShapeError("relevance matrix does not match the neighborhoods")
    return np.concatenate([xv, rel.row_norm @ xi], axis=1)


def propagate_videos_to_items(xv, xi, rel: RelevanceMatrix) -> np.ndarray:
    xv, xi = _as_matrix(xv, "xv"), _as_matrix(xi, "xi")
    if len(xv) == 0:
        return np.concatenate([xi, np.zeros_like(xi)], axis=1)
    if rel.col_norm.shape != (len(xv), len(xi)):
        raise ShapeError("relevance matrix does not match the neighborhoods")
    return np.concatenate([xi, rel.col_norm.T @ xv], axis=1)


# ---------------------------------------------------------------- batched


def match_forward(xv, xi, mv, mi, metric=None):
    """Batched relevance, dual normalisation and bidirectional propagation.

    ``xv``: (B, Nv, w), ``xi``: (B, Ni, w), masks (B, Nv) / (B, Ni). Padded rows
    must be zero. Returns ``(hv, hi, cache)`` with widths 2w.
    """
    xi_m = xi @ metric.T if metric is not None else xi
    raw = xv @ xi_m.transpose(0, 2, 1)
    pair = mv[:, :, None] & mi[:, None, :]
    row = masked_softmax(raw, pair, -1)
    col = masked_softmax(raw, pair, -2)
    hv = np.concatenate([xv, row @ xi], axis=-1)
    hi = np.concatenate([xi, col.transpose(0, 2, 1) @ xv], axis=-1)
    cache = (xv, xi, xi_m, metric, raw, row, col)
    return hv, hi, cache


def match_backward(g_hv, g_hi, cache):
    """Returns ``(g_xv, g_xi, g_metric)``; ``g_metric`` is None without a metric."""
    xv, xi, xi_m, metric, _, row, col = cache
    w = xv.shape[-1]
    g_xv = g_hv[..., :w].copy()
    g_xi = g_hi[..., :w].copy()
    g_av, g_ai = g_hv[..., w:], g_hi[..., w:]
    g_row = g_av @ xi.transpose(0, 2, 1)
    g_xi += row.transpose(0, 2, 1) @ g_av
    g_col = xv @ g_ai.transpose(0, 2, 1)
    g_xv += col @ g_ai
    g_raw = softmax_backward(row, g_row, -1) + softmax_backward(col, g_col, -2)
    g_xv += g_raw @ xi_m
    g_xi_m = g_raw.transpose(0, 2, 1) @ xv
    g_metric = None
    if metric is not None:
        g_xi += g_xi_m @ metric
        q = g_raw @ xi
        g_metric = xv.reshape(-1, w).T @ q.reshape(-1, w)
    else:
        g_xi += g_xi_m
    return g_xv, g_xi, g_metric


def relevance_of(cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw, row- and column-normalised relevance from a forward cache."""
    _, _, _, _, raw, row, col = cache
    return raw, row, col
