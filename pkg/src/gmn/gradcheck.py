"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DualGraph, FeatureTable, Kind
from .model import GMN, UserBatch
from .params import GMNConfig


@dataclass
class TensorCheck:
    name: str
    size: int
    rel_error: float
    abs_error: float

    def ok(self, tol: float) -> bool:
        # tensors with (numerically) no gradient are judged on absolute error
        return self.rel_error < tol or self.abs_error < 1e-9


def tensor_errors(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float]:
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    return (diff / scale if scale > 0 else 0.0), diff


def check_gradients(model: GMN, batch: UserBatch, pos, negs, l2: float = 0.0, h: float = 1e-4):
    """Compare analytic and central-difference gradients for every parameter tensor.

    The checked objective is the mean BPR loss of the batch plus ``l2 * ||theta||^2``;
    dropout is off.
    """
    p = model.params

    def objective() -> float:
        return model.loss(batch, pos, negs) + l2 * p.sq_norm()

    p.zero_grads()
    model.loss(batch, pos, negs, backward=True)
    results = []
    for name, theta in p.values.items():
        analytic = p.grads[name] + 2.0 * l2 * theta
        numeric = np.zeros_like(theta)
        flat, nflat = theta.reshape(-1), numeric.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = objective()
            flat[j] = old - h
            down = objective()
            flat[j] = old
            nflat[j] = (up - down) / (2 * h)
        rel, ab = tensor_errors(analytic, numeric)
        results.append(TensorCheck(name, theta.size, rel, ab))
    p.zero_grads()
    return results


def micro_problem(d: int = 8, seed: int = 0, k: int = 2, rounds: int = 1, hidden: int = 16, **overrides):
    """A small random dual graph and one training sample.

    The checked user has 3 videos and 4 items in its subgraph, a held-out
    positive video and 4 negatives.
    """
    rng = np.random.default_rng(seed)
    n_users, n_videos, n_items = 6, 10, 8
    uv = [(0, v, 10 + v) for v in range(3)]
    ui = [(0, i, 20 + i) for i in range(4)]
    for u in range(1, n_users):
        for v in rng.choice(n_videos, 4, replace=False):
            uv.append((u, int(v), int(rng.integers(100))))
        for i in rng.choice(n_items, 3, replace=False):
            ui.append((u, int(i), int(rng.integers(100))))
    features = {
        Kind.USER: FeatureTable(("user_id",), (n_users,), np.arange(n_users)[:, None]),
        Kind.VIDEO: FeatureTable(
            ("video_cat", "video_id"), (3, n_videos), np.stack([np.arange(n_videos) % 3, np.arange(n_videos)], 1)
        ),
        Kind.ITEM: FeatureTable(("item_id",), (n_items,), np.arange(n_items)[:, None]),
    }
    g = DualGraph.from_edges(n_users, n_videos, n_items, np.array(uv), np.array(ui), features)
    cfg = GMNConfig(d=d, k1=k, k2=k, rounds=rounds, hidden=hidden, seed=seed, dropout=0.0, cap_v=50, cap_i=50)
    cfg = cfg.replace(**overrides)
    model = GMN(g, cfg)
    # perturb away from the identity-like init so every path carries signal
    for name, theta in model.params.values.items():
        theta += 0.3 * rng.standard_normal(theta.shape)
    batch = model.explicit_batch([0], [[0, 1, 2]], [[0, 1, 2, 3]])
    pos = np.array([3])
    negs = np.array([[4, 5, 6, 7]])
    return model, batch, pos, negs
