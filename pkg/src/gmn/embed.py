"""Initial node embeddings (feature concatenation) and the mean-pooling GNN.

The per-node functions are the reference API. :class:`EmbeddingContext` computes
the same quantities for every node of the graph at once and knows how to push
gradients back into the embedding tables.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import DualGraph, Kind, NodeId
from .params import GMNConfig, ParamStore, table_name


class ShapeError(ValueError):
    pass


def embed_init(p: ParamStore, fields: Sequence[str], features: Sequence[int]) -> np.ndarray:
    """Concatenate the looked-up row of each field's table, in field order."""
    if len(fields) != len(features):
        raise ShapeError("one feature id per field is required")
    rows = []
    for name, idx in zip(fields, features):
        table = p[table_name(name)]
        if not 0 <= idx < table.shape[0]:
            raise IndexError(f"feature id {idx} out of vocabulary for field {name!r}")
        rows.append(table[idx])
    return np.concatenate(rows)


def embed_node(p: ParamStore, g: DualGraph, node: NodeId) -> np.ndarray:
    t = g.features[node.kind]
    return embed_init(p, t.fields, t.ids[node.index])


def gnn_update(center: np.ndarray, neighbors: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of the neighbor embeddings; a node with no neighbors keeps ``center``."""
    if len(neighbors) == 0:
        return np.array(center, dtype=np.float64)
    widths = {np.shape(n) for n in neighbors}
    if len(widths) != 1:
        raise ShapeError(f"neighbor embeddings have mixed widths {sorted(widths)}")
    return np.mean(np.asarray(neighbors, dtype=np.float64), axis=0)


def mean_operator(indptr: np.ndarray, indices: np.ndarray, n_cols: int) -> sp.csr_matrix:
    """Row-normalised adjacency: ``A @ X`` averages the neighbor rows of X."""
    deg = np.diff(indptr)
    data = np.repeat(1.0 / np.maximum(deg, 1), deg)
    return sp.csr_matrix((data, indices, indptr), shape=(len(indptr) - 1, n_cols))


class FeatureLookup:
    """Feature-concatenation embeddings for every node of one kind, in one shot."""

    def __init__(self, g: DualGraph, kind: Kind, config: GMNConfig):
        t = g.features[kind]
        self.kind = kind
        self.names = [table_name(f) for f in t.fields]
        self.ids = t.ids
        self.widths = config.field_split(list(t.fields))
        self.n = t.ids.shape[0]
        self.d = config.d
        # one-hot scatter matrices: table_grad = onehot.T @ node_grad
        self.onehots = [
            sp.csr_matrix(
                (np.ones(self.n), (np.arange(self.n), t.ids[:, f])), shape=(self.n, vocab)
            )
            for f, vocab in enumerate(t.vocab)
        ]

    def forward(self, p: ParamStore) -> np.ndarray:
        for name, w in zip(self.names, self.widths):
            if p[name].shape[1] != w:
                raise ShapeError(f"{name} has width {p[name].shape[1]}, config expects {w}")
        parts = [p[name][self.ids[:, f]] for f, name in enumerate(self.names)]
        if not parts:
            return np.zeros((self.n, self.d))
        return np.concatenate(parts, axis=1)

    def backward(self, p: ParamStore, grad: np.ndarray) -> None:
        start = 0
        for name, w, oh in zip(self.names, self.widths, self.onehots):
            p.grads[name] += oh.T @ grad[:, start : start + w]
            start += w


class EmbeddingContext:
    """All node-level embeddings of a (training) graph.

    ``x_user``/``x_video``/``x_item`` are initial embeddings; ``z_video`` is the
    video GNN output over the user-video graph (also the video scoring vector)
    and ``x_item_gnn`` the item GNN output over the user-item graph. Nodes with no
    neighbors fall back to their initial embedding.
    """

    def __init__(self, g: DualGraph, config: GMNConfig):
        self.graph = g
        self.lookups = {k: FeatureLookup(g, k, config) for k in Kind}
        self.video_mean = mean_operator(g.vu_indptr, g.vu_indices, g.n_users)
        self.item_mean = mean_operator(g.iu_indptr, g.iu_indices, g.n_users)
        self.video_cold = np.diff(g.vu_indptr) == 0
        self.item_cold = np.diff(g.iu_indptr) == 0

    def forward(self, p: ParamStore) -> dict[str, np.ndarray]:
        xu = self.lookups[Kind.USER].forward(p)
        xv = self.lookups[Kind.VIDEO].forward(p)
        xi = self.lookups[Kind.ITEM].forward(p)
        zv = np.asarray(self.video_mean @ xu)
        zv[self.video_cold] = xv[self.video_cold]
        gi = np.asarray(self.item_mean @ xu)
        gi[self.item_cold] = xi[self.item_cold]
        return {"x_user": xu, "x_video": xv, "x_item": xi, "z_video": zv, "x_item_gnn": gi}

    def backward(self, p: ParamStore, grads: dict[str, np.ndarray]) -> None:
        g_xu = grads["x_user"].copy()
        g_xv = grads["x_video"].copy()
        g_xi = grads["x_item"].copy()
        g_zv = grads["z_video"]
        g_gi = grads["x_item_gnn"]
        g_xv[self.video_cold] += g_zv[self.video_cold]
        g_xi[self.item_cold] += g_gi[self.item_cold]
        g_xu += self.video_mean.T @ g_zv + self.item_mean.T @ g_gi
        self.lookups[Kind.USER].backward(p, g_xu)
        self.lookups[Kind.VIDEO].backward(p, g_xv)
        self.lookups[Kind.ITEM].backward(p, g_xi)

    def zero_grads_like(self, emb: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in emb.items()}

