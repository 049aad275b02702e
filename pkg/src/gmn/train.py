"""Training loop: negative sampling, BPR epochs with Adam, evaluation, early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .graph import DualGraph, Kind, NodeId
from .metrics import MetricsReport
from .model import GMN

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def sample_negatives(g: DualGraph, u: NodeId, n: int, rng: np.random.Generator) -> list[NodeId]:
    """``n`` distinct videos drawn uniformly from those the user has not watched."""
    if n == 0:
        return []
    seen = g.user_videos(u.index)
    if g.n_videos - len(seen) < n:
        raise ValueError(f"only {g.n_videos - len(seen)} unseen videos, cannot draw {n} negatives")
    pool = np.setdiff1d(np.arange(g.n_videos), seen, assume_unique=True)
    return [NodeId(Kind.VIDEO, int(v)) for v in rng.choice(pool, n, replace=False)]


def batch_negatives(g: DualGraph, users: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised rejection sampler: row b holds ``n`` distinct non-neighbors of ``users[b]``."""
    users = np.asarray(users, dtype=np.int64)
    out = rng.integers(0, g.n_videos, size=(len(users), n))
    if n == 0:
        return out
    deg = np.diff(g.uv_indptr)[users]
    if np.any(g.n_videos - deg < n):
        raise ValueError("video universe too small for the requested negatives")
    edge_keys = np.repeat(np.arange(g.n_users), np.diff(g.uv_indptr)) * g.n_videos + g.uv_indices
    edge_keys.sort()
    while True:
        keys = users[:, None] * g.n_videos + out
        pos = np.searchsorted(edge_keys, keys)
        bad = edge_keys[np.minimum(pos, len(edge_keys) - 1)] == keys if len(edge_keys) else np.zeros_like(keys, bool)
        srt = np.sort(out, axis=1)
        dup_rows = np.any(srt[:, 1:] == srt[:, :-1], axis=1) if n > 1 else np.zeros(len(users), bool)
        # redraw a whole row when it contains duplicates, single entries when they hit an edge
        bad |= dup_rows[:, None]
        if not bad.any():
            return out
        out[bad] = rng.integers(0, g.n_videos, size=int(bad.sum()))


def training_samples(g: DualGraph, rng: np.random.Generator, per_user: int = 0):
    """Positive (user, video) pairs for one epoch, shuffled.

    ``per_user = 0`` uses every training edge once; otherwise each user with at
    least one video edge contributes ``per_user`` edges drawn uniformly.
    """
    deg = np.diff(g.uv_indptr)
    if per_user == 0:
        users = np.repeat(np.arange(g.n_users), deg)
        videos = g.uv_indices.copy()
    else:
        active = np.flatnonzero(deg > 0)
        users = np.repeat(active, per_user)
        offs = (rng.random(len(users)) * deg[users]).astype(np.int64)
        videos = g.uv_indices[g.uv_indptr[users] + offs]
    perm = rng.permutation(len(users))
    return users[perm], videos[perm]


@dataclass
class EpochStats:
    mean_loss: float
    steps: int
    seconds: float


def train_epoch(model: GMN, users, positives, rng: np.random.Generator, lr: float | None = None) -> EpochStats:
    """One pass over ``(users, positives)`` in mini-batches, one Adam step per batch."""
    cfg, p = model.config, model.params
    lr = cfg.lr if lr is None else lr
    n_total = len(users)
    # the L2 term of the full objective, spread evenly over per-sample-mean batches
    decay = cfg.l2 / max(n_total, 1)
    t0 = time.perf_counter()
    total, steps = 0.0, 0
    for s in range(0, n_total, cfg.batch_size):
        bu, bp = users[s : s + cfg.batch_size], positives[s : s + cfg.batch_size]
        negs = batch_negatives(model.graph, bu, cfg.negatives, rng)
        batch = model.user_batch(bu, exclude_videos=bp)
        p.zero_grads()
        loss = model.loss(batch, bp, negs, training=True, rng=rng, backward=True)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at batch {steps} (users {bu[:5].tolist()}...)")
        p.adam_step(lr, (cfg.beta1, cfg.beta2), cfg.eps, decay)
        total += loss * len(bu)
        steps += 1
    return EpochStats(total / max(n_total, 1), steps, time.perf_counter() - t0)


def score_samples(model: GMN, samples: np.ndarray) -> np.ndarray:
    emb = model.ctx.forward(model.params)
    users, inverse = np.unique(samples[:, 0], return_inverse=True)
    zu = model.user_vectors(users, emb)
    zv = emb["z_video"]
    return np.einsum("nd,nd->n", zu[inverse], zv[samples[:, 1]])


def evaluate(model: GMN, samples: np.ndarray) -> MetricsReport:
    scores = score_samples(model, samples)
    return MetricsReport.from_scores(samples[:, 0], scores, samples[:, 2])


@dataclass
class History:
    epochs: list[EpochStats] = field(default_factory=list)
    val: list[MetricsReport] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best(self) -> MetricsReport | None:
        return self.val[self.best_epoch] if self.best_epoch >= 0 else None


def fit(model: GMN, val: np.ndarray | None = None, epochs: int | None = None, patience: int | None = None,
        early_stopping: bool = True) -> History:
    """Train, evaluating on ``val`` after every epoch.

    With early stopping the parameters of the best-AUC epoch are restored at the
    end and training halts after ``patience`` epochs without improvement.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    patience = cfg.patience if patience is None else patience
    rng = np.random.default_rng([cfg.seed, 1])
    hist = History()
    best_auc, best_params, stale = -np.inf, None, 0
    for ep in range(epochs):
        users, positives = training_samples(model.graph, rng, cfg.samples_per_user)
        stats = train_epoch(model, users, positives, rng)
        hist.epochs.append(stats)
        msg = f"epoch {ep + 1}: loss {stats.mean_loss:.4f} ({stats.seconds:.1f}s)"
        if val is not None and len(val):
            report = evaluate(model, val)
            hist.val.append(report)
            msg += f" val auc {report.auc:.2f}"
            if report.auc > best_auc:
                best_auc, stale, hist.best_epoch = report.auc, 0, ep
                if early_stopping:
                    best_params = model.params.copy()
            else:
                stale += 1
        log.info(msg)
        if early_stopping and val is not None and stale >= patience:
            break
    if early_stopping and best_params is not None:
        model.params.load_values(best_params)
    return hist
