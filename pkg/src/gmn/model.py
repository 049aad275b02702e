"""The full graph matching network: forward and hand-derived backward passes.

A batch is a set of users. For each user the capped, most-recent video and item
neighborhoods are gathered into padded tensors; the whole pipeline (node-level
matching, preference pooling and matching, MLP fusion) then runs on the batch at
once. Video scoring vectors are the video GNN embeddings and have no tower of
their own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .embed import EmbeddingContext, ShapeError
from .graph import DualGraph, subgraph_table
from .node_match import match_backward, match_forward
from .params import GMNConfig, ParamStore, init_params, metric_matrix
from .pref_match import compress_backward, compress_forward


def score(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"user width {u.shape} != video width {v.shape}")
    return float(u @ v)


def bpr_loss(pos_score: float, neg_scores, lam: float = 0.0, params_sq_norm: float = 0.0) -> float:
    """Sum over negatives of ``-ln sigmoid(pos - neg)`` plus ``lam * ||theta||^2``."""
    diff = pos_score - np.asarray(neg_scores, dtype=np.float64)
    return float(np.sum(np.logaddexp(0.0, -diff)) + lam * params_sq_norm)


def bpr_grad(diff):
    """Derivative of ``-ln sigmoid(diff)`` with respect to ``diff``."""
    return -expit(-np.asarray(diff, dtype=np.float64))


# ---------------------------------------------------------------- fusion MLP


def mlp_forward(x, p: ParamStore, keep_mask=None):
    if x.shape[-1] != p["mlp/w0"].shape[0]:
        raise ShapeError(f"MLP input width {x.shape[-1]} != {p['mlp/w0'].shape[0]}")
    xin = x * keep_mask if keep_mask is not None else x
    pre = xin @ p["mlp/w0"] + p["mlp/b0"]
    hid = np.maximum(pre, 0.0)
    out = hid @ p["mlp/w1"] + p["mlp/b1"]
    return out, (xin, pre, hid, keep_mask)


def mlp_backward(g_out, cache, p: ParamStore):
    xin, pre, hid, keep_mask = cache
    p.grads["mlp/w1"] += hid.T @ g_out
    p.grads["mlp/b1"] += g_out.sum(axis=0)
    g_pre = (g_out @ p["mlp/w1"].T) * (pre > 0)
    p.grads["mlp/w0"] += xin.T @ g_pre
    p.grads["mlp/b0"] += g_pre.sum(axis=0)
    g_x = g_pre @ p["mlp/w0"].T
    return g_x * keep_mask if keep_mask is not None else g_x


def fuse_user(e_uv, e_ui, x_uv, x_ui, p: ParamStore, training: bool = False, drop_prob: float = 0.0, rng=None):
    """User vector from the two compressed sides and the two user GNN embeddings."""
    x = np.concatenate([np.atleast_2d(e_uv), np.atleast_2d(e_ui), np.atleast_2d(x_uv), np.atleast_2d(x_ui)], 1)
    keep = None
    if training and drop_prob > 0:
        rng = rng if rng is not None else np.random.default_rng()
        keep = (rng.random(x.shape) >= drop_prob) / (1.0 - drop_prob)
    out, _ = mlp_forward(x, p, keep)
    return out[0] if np.ndim(e_uv) == 1 else out


# ---------------------------------------------------------------- the network


@dataclass
class UserBatch:
    users: np.ndarray
    videos: np.ndarray  # (B, Nv) with -1 padding
    items: np.ndarray
    mv: np.ndarray
    mi: np.ndarray


def _scatter_add(out: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    idx = idx.reshape(-1)
    vals = vals.reshape(len(idx), -1)
    onehot = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(out.shape[0], len(idx)))
    out += onehot @ vals


class GMN:
    """Model bound to a training graph.

    The graph provides the GNN neighborhoods and the user subgraphs; videos are
    scored against the GNN embeddings of that same graph.
    """

    def __init__(self, graph: DualGraph, config: GMNConfig, params: ParamStore | None = None):
        self.graph = graph
        self.config = config.validate()
        self.params = params if params is not None else init_params(config, graph.schema(), config.seed)
        self.ctx = EmbeddingContext(graph, config)
        self.sub_v, self.len_v, self.sub_i, self.len_i = subgraph_table(
            graph, config.cap_v, config.cap_i, config.seed
        )

    # ------------------------------------------------------------ batches

    def user_batch(self, users, exclude_videos=None) -> UserBatch:
        """Gather neighborhoods; ``exclude_videos[b]`` is masked out of user b's videos."""
        users = np.asarray(users, dtype=np.int64)
        cfg = self.config
        nv = max(int(self.len_v[users].max(initial=0)), 1)
        ni = max(int(self.len_i[users].max(initial=0)), 1)
        vids = self.sub_v[users, :nv]
        its = self.sub_i[users, :ni]
        mv = (vids >= 0) & cfg.use_uv
        mi = (its >= 0) & cfg.use_ui
        if exclude_videos is not None:
            mv &= vids != np.asarray(exclude_videos)[:, None]
        return UserBatch(users, vids, its, mv, mi)

    def explicit_batch(self, users, videos, items) -> UserBatch:
        """Batch from explicit per-user neighbor lists."""
        nv = max(max((len(v) for v in videos), default=0), 1)
        ni = max(max((len(i) for i in items), default=0), 1)
        vids = np.full((len(users), nv), -1, dtype=np.int64)
        its = np.full((len(users), ni), -1, dtype=np.int64)
        for b, (v, i) in enumerate(zip(videos, items)):
            vids[b, : len(v)] = v
            its[b, : len(i)] = i
        mv = (vids >= 0) & self.config.use_uv
        mi = (its >= 0) & self.config.use_ui
        return UserBatch(np.asarray(users, dtype=np.int64), vids, its, mv, mi)

    # ------------------------------------------------------------ user tower

    def user_forward(self, emb, batch: UserBatch, training: bool = False, rng=None):
        cfg, p = self.config, self.params
        mv, mi = batch.mv, batch.mi
        vids, its = np.maximum(batch.videos, 0), np.maximum(batch.items, 0)
        fv, fi = mv[..., None], mi[..., None]
        xv = emb["z_video"][vids] * fv
        xi = emb["x_item_gnn"][its] * fi

        # user-side GNN: mean of the neighbors' initial embeddings
        cnt_v, cnt_i = mv.sum(1), mi.sum(1)
        x_uv = (emb["x_video"][vids] * fv).sum(1) / np.maximum(cnt_v, 1)[:, None]
        x_ui = (emb["x_item"][its] * fi).sum(1) / np.maximum(cnt_i, 1)[:, None]
        cold_v = (cnt_v == 0) & cfg.use_uv
        cold_i = (cnt_i == 0) & cfg.use_ui
        own = emb["x_user"][batch.users]
        x_uv[cold_v] = own[cold_v]
        x_ui[cold_i] = own[cold_i]

        metric = metric_matrix(p)
        if cfg.node_matching:
            hv, hi, mcache = match_forward(xv, xi, mv, mi, metric)
        else:
            hv = np.concatenate([xv, np.zeros_like(xv)], -1)
            hi = np.concatenate([xi, np.zeros_like(xi)], -1)
            mcache = None
        e_uv, e_ui, ccache = compress_forward(hv, hi, mv, mi, p, cfg)

        x = np.concatenate([e_uv, e_ui, x_uv, x_ui], axis=1)
        keep = None
        if training and cfg.drop_prob > 0:
            keep = (rng.random(x.shape) >= cfg.drop_prob) / (1.0 - cfg.drop_prob)
        z_u, fcache = mlp_forward(x, p, keep)
        cache = (batch, vids, its, cnt_v, cnt_i, cold_v, cold_i, metric, mcache, ccache, fcache)
        return z_u, cache

    def user_backward(self, g_zu, cache, g_emb) -> None:
        cfg, p = self.config, self.params
        batch, vids, its, cnt_v, cnt_i, cold_v, cold_i, metric, mcache, ccache, fcache = cache
        d = cfg.d
        fv, fi = batch.mv[..., None], batch.mi[..., None]
        g_x = mlp_backward(g_zu, fcache, p)
        w = cfg.pref_width
        g_ev, g_ei = g_x[:, :w], g_x[:, w : 2 * w]
        g_xuv, g_xui = g_x[:, 2 * w : 2 * w + d].copy(), g_x[:, 2 * w + d :].copy()

        g_hv, g_hi = compress_backward(g_ev, g_ei, ccache, p)
        if mcache is not None:
            g_xv, g_xi, g_m = match_backward(g_hv, g_hi, mcache)
            if "metric" in p:
                p.grads["metric"] += g_m
            else:
                p.grads["metric_left"] += g_m @ p["metric_right"].T
                p.grads["metric_right"] += p["metric_left"].T @ g_m
        else:
            g_xv, g_xi = g_hv[..., :d], g_hi[..., :d]

        _scatter_add(g_emb["z_video"], vids, g_xv * fv)
        _scatter_add(g_emb["x_item_gnn"], its, g_xi * fi)

        g_own = np.zeros((len(batch.users), d))
        g_own[cold_v] += g_xuv[cold_v]
        g_own[cold_i] += g_xui[cold_i]
        g_xuv[cold_v] = 0.0
        g_xui[cold_i] = 0.0
        _scatter_add(g_emb["x_user"], batch.users, g_own)
        g_rows_v = (g_xuv / np.maximum(cnt_v, 1)[:, None])[:, None, :] * fv
        g_rows_i = (g_xui / np.maximum(cnt_i, 1)[:, None])[:, None, :] * fi
        _scatter_add(g_emb["x_video"], vids, np.broadcast_to(g_rows_v, vids.shape + (d,)))
        _scatter_add(g_emb["x_item"], its, np.broadcast_to(g_rows_i, its.shape + (d,)))

    # ------------------------------------------------------------ objective

    def loss(self, batch: UserBatch, pos, negs, training=False, rng=None, backward=False, emb=None):
        """Mean over the batch of the per-positive BPR sum.

        With ``backward`` the gradients of that mean are accumulated into
        ``self.params.grads`` (the L2 penalty is left to the optimizer).
        """
        pos = np.asarray(pos, dtype=np.int64)
        negs = np.asarray(negs, dtype=np.int64).reshape(len(pos), -1)
        emb = emb if emb is not None else self.ctx.forward(self.params)
        z_u, cache = self.user_forward(emb, batch, training, rng)
        zv = emb["z_video"]
        zp, zn = zv[pos], zv[negs]
        s_pos = np.einsum("bd,bd->b", z_u, zp)
        s_neg = np.einsum("bd,bnd->bn", z_u, zn)
        diff = s_pos[:, None] - s_neg
        n = len(pos)
        loss = float(np.logaddexp(0.0, -diff).sum() / n)
        if not backward:
            return loss
        g_diff = bpr_grad(diff) / n
        g_emb = self.ctx.zero_grads_like(emb)
        g_zu = np.einsum("bn,bnd->bd", g_diff, zp[:, None, :] - zn)
        _scatter_add(g_emb["z_video"], pos, g_diff.sum(1)[:, None] * z_u)
        _scatter_add(g_emb["z_video"], negs, -g_diff[..., None] * z_u[:, None, :])
        self.user_backward(g_zu, cache, g_emb)
        self.ctx.backward(self.params, g_emb)
        return loss

    # ------------------------------------------------------------ inference

    def video_vectors(self, emb=None) -> np.ndarray:
        emb = emb if emb is not None else self.ctx.forward(self.params)
        return emb["z_video"]

    def user_vectors(self, users=None, emb=None, chunk: int = 1024) -> np.ndarray:
        emb = emb if emb is not None else self.ctx.forward(self.params)
        users = np.arange(self.graph.n_users) if users is None else np.asarray(users, dtype=np.int64)
        out = np.zeros((len(users), self.config.d))
        for s in range(0, len(users), chunk):
            z, _ = self.user_forward(emb, self.user_batch(users[s : s + chunk]))
            out[s : s + chunk] = z
        return out

    def inspect_user(self, u: int):
        """Forward one user and return the cached node- and preference-level relevance."""
        from .node_match import relevance_of
        from .pref_match import preference_relevance_of

        emb = self.ctx.forward(self.params)
        batch = self.user_batch([u])
        _, cache = self.user_forward(emb, batch)
        mcache, ccache = cache[8], cache[9]
        nv, ni = int(batch.mv[0].sum()), int(batch.mi[0].sum())
        node = None
        if mcache is not None:
            node = tuple(m[0][:nv, :ni] for m in relevance_of(mcache))
        pref = preference_relevance_of(ccache)
        if pref is not None:
            pref = tuple(m[0] for m in pref)
        return batch.videos[0, :nv], batch.items[0, :ni], node, pref
