"""Synthetic dual graphs with planted topical structure.

Every user has a small set of interest topics on the video side. On the item
side each interaction follows the video-side interests with probability
``signal`` and an independent set of interests otherwise, so ``signal`` sets how
much the two graphs say about each other (0: nothing, 1: the same tastes).
Videos and items are split evenly over topics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import DualGraph, FeatureTable, Kind, save_graph
from .params import ConfigError


@dataclass
class SyntheticData:
    graph: DualGraph  # training graph: early video edges plus all item edges
    val: np.ndarray  # (n, 3) rows of user, video, label
    video_interest: np.ndarray  # (n_users, n_topics) latent video-side distribution
    item_interest: np.ndarray
    video_topic: np.ndarray
    item_topic: np.ndarray
    uv_all: np.ndarray  # every generated user-video edge (user, video, ts)
    ui_all: np.ndarray


def _interests(rng, n_users, n_topics, n_interests, concentration):
    theta = np.zeros((n_users, n_topics))
    for u in range(n_users):
        topics = rng.choice(n_topics, n_interests, replace=False)
        theta[u, topics] = rng.dirichlet(np.full(n_interests, concentration))
    return theta


def _draw_edges(rng, theta, per_user, members, noise, n_targets):
    """Distinct (user, target) edges; each edge picks a topic from theta then a target in it."""
    n_users, n_topics = theta.shape
    edges = []
    counts = np.maximum(1, rng.poisson(per_user, size=n_users))
    cum = np.cumsum(theta, axis=1)
    for u in range(n_users):
        want = int(counts[u])
        chosen: set[int] = set()
        tries = 0
        while len(chosen) < want and tries < 20 * want:
            tries += 1
            if rng.random() < noise:
                t = int(rng.integers(n_targets))
            else:
                topic = min(int(np.searchsorted(cum[u], rng.random() * cum[u, -1], side="right")), n_topics - 1)
                pool = members[topic]
                t = int(pool[rng.integers(len(pool))])
            chosen.add(t)
        for t in chosen:
            edges.append((u, t))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def make_synthetic(
    n_users: int,
    n_videos: int,
    n_items: int,
    n_topics: int,
    signal: float,
    seed: int = 0,
    videos_per_user: float = 10.0,
    items_per_user: float = 20.0,
    n_interests: int = 2,
    concentration: float = 1.0,
    noise: float = 0.0,
    val_fraction: float = 0.2,
    eval_negatives: int = 4,
    topic_features: bool = True,
) -> SyntheticData:
    if not 0.0 <= signal <= 1.0:
        raise ConfigError("signal must be in [0, 1]")
    if min(n_users, n_videos, n_items, n_topics) < 1:
        raise ConfigError("all sizes must be positive")
    if n_videos % n_topics or n_items % n_topics:
        raise ConfigError("n_topics must divide both the video and the item counts")
    if n_interests > n_topics:
        raise ConfigError("a user cannot have more interests than there are topics")
    if videos_per_user + eval_negatives >= n_videos:
        raise ConfigError("video universe too small for the requested degrees")
    rng = np.random.default_rng(seed)
    video_topic = np.arange(n_videos) % n_topics
    item_topic = np.arange(n_items) % n_topics
    v_members = [np.flatnonzero(video_topic == t) for t in range(n_topics)]
    i_members = [np.flatnonzero(item_topic == t) for t in range(n_topics)]

    theta_v = _interests(rng, n_users, n_topics, n_interests, concentration)
    theta_own = _interests(rng, n_users, n_topics, n_interests, concentration)
    theta_i = signal * theta_v + (1.0 - signal) * theta_own

    uv = _draw_edges(rng, theta_v, videos_per_user, v_members, noise, n_videos)
    ui = _draw_edges(rng, theta_i, items_per_user, i_members, noise, n_items)
    uv = np.column_stack([uv, rng.integers(0, 10**6, size=len(uv))])
    ui = np.column_stack([ui, rng.integers(0, 10**6, size=len(ui))])

    # per-user chronological split of the video edges
    order = np.lexsort((uv[:, 2], uv[:, 0]))
    uv = uv[order]
    starts = np.searchsorted(uv[:, 0], np.arange(n_users))
    ends = np.searchsorted(uv[:, 0], np.arange(n_users), side="right")
    is_val = np.zeros(len(uv), dtype=bool)
    for u in range(n_users):
        n = ends[u] - starts[u]
        n_val = int(np.floor(val_fraction * n)) if n >= 2 else 0
        if n_val:
            is_val[ends[u] - n_val : ends[u]] = True

    features = None
    if topic_features:
        features = {
            Kind.USER: FeatureTable(("user_id",), (n_users,), np.arange(n_users)[:, None]),
            Kind.VIDEO: FeatureTable(
                ("video_id", "video_topic"), (n_videos, n_topics), np.column_stack([np.arange(n_videos), video_topic])
            ),
            Kind.ITEM: FeatureTable(
                ("item_id", "item_topic"), (n_items, n_topics), np.column_stack([np.arange(n_items), item_topic])
            ),
        }
    train = DualGraph.from_edges(n_users, n_videos, n_items, uv[~is_val], ui, features)

    full_sets = [set(uv[starts[u] : ends[u], 1].tolist()) for u in range(n_users)]
    rows = []
    for u, v, _ in uv[is_val]:
        rows.append((u, v, 1))
        if n_videos - len(full_sets[u]) < eval_negatives:
            raise ConfigError(f"user {u} has fewer than {eval_negatives} unwatched videos to sample")
        negs: set[int] = set()
        while len(negs) < eval_negatives:
            c = int(rng.integers(n_videos))
            if c not in full_sets[u]:
                negs.add(c)
        rows.extend((u, c, 0) for c in sorted(negs))
    val = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return SyntheticData(train, val, theta_v, theta_i, video_topic, item_topic, uv, ui)


def modal_topics(edges: np.ndarray, topic: np.ndarray, n_users: int, n_topics: int) -> np.ndarray:
    """Most frequent topic among each user's edges (-1 for users with none)."""
    hist = np.zeros((n_users, n_topics), dtype=np.int64)
    np.add.at(hist, (edges[:, 0], topic[edges[:, 1]]), 1)
    out = hist.argmax(axis=1)
    out[hist.sum(axis=1) == 0] = -1
    return out


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in mutual information (nats) between two discrete label arrays."""
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    joint = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(joint, (ia, ib), 1)
    joint /= joint.sum()
    pa, pb = joint.sum(1, keepdims=True), joint.sum(0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def write_synthetic(data: SyntheticData, out: str | Path) -> None:
    """Write logs, features, eval samples and the binary training graph into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    g = data.graph
    with open(out / "videos.tsv", "w", encoding="utf-8", newline="\n") as f:
        for u, v, t in g.uv_edge_array():
            f.write(f"{g.keys[Kind.USER][u]}\t{g.keys[Kind.VIDEO][v]}\t{t}\n")
    with open(out / "items.tsv", "w", encoding="utf-8", newline="\n") as f:
        for u, i, t in g.ui_edge_array():
            f.write(f"{g.keys[Kind.USER][u]}\t{g.keys[Kind.ITEM][i]}\t{t}\n")
    with open(out / "features.tsv", "w", encoding="utf-8", newline="\n") as f:
        for kind in Kind:
            table = g.features[kind]
            for n, key in enumerate(g.keys[kind]):
                toks = "\t".join(f"{name}:{table.ids[n, j]}" for j, name in enumerate(table.fields))
                f.write(f"{key}\t{toks}\n")
    write_samples(g, data.val, out / "val.tsv")
    save_graph(g, out / "graph.gmng")


def write_samples(g: DualGraph, samples: np.ndarray, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for u, v, label in samples:
            f.write(f"{g.keys[Kind.USER][u]}\t{g.keys[Kind.VIDEO][v]}\t{label}\n")


def read_samples(g: DualGraph, path: str | Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise ValueError(f"{path} line {lineno}: expected 'user\\tvideo\\tlabel'")
            rows.append((g.node(Kind.USER, parts[0]).index, g.node(Kind.VIDEO, parts[1]).index, int(parts[2])))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)
