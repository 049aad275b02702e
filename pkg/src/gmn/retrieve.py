"""Exhaustive top-k retrieval and embedding export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Kind, NodeId
from .model import GMN


@dataclass
class Retrieval:
    user: NodeId
    indices: np.ndarray
    scores: np.ndarray
    keys: list[str]
    truncated: bool = False  # k exceeded the video count; everything was returned

    def rows(self) -> list[tuple[str, float]]:
        return list(zip(self.keys, self.scores.tolist()))


def rank(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores, ties going to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[: max(k, 0)]


def retrieve_topk(model: GMN, u: NodeId | int, k: int, emb=None) -> Retrieval:
    if isinstance(u, int):
        u = NodeId(Kind.USER, u)
    if u.kind != Kind.USER:
        raise ValueError(f"retrieval needs a user node, got {u}")
    if k < 0:
        raise ValueError("k must be non-negative")
    emb = emb if emb is not None else model.ctx.forward(model.params)
    zu = model.user_vectors([u.index], emb)[0]
    scores = model.video_vectors(emb) @ zu
    top = rank(scores, k)
    keys = [model.graph.keys[Kind.VIDEO][v] for v in top]
    return Retrieval(u, top, scores[top], keys, truncated=k > len(scores))


def _write_vectors(path: Path, keys, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=np.float32)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, row in zip(keys, vectors):
            f.write(key + "\t" + " ".join(f"{x:.7g}" for x in row.tolist()) + "\n")


def export_embeddings(model: GMN, out: str | Path) -> tuple[Path, Path]:
    """Write ``videos.emb`` (scoring vectors) and ``users.emb`` (user tower outputs) into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    emb = model.ctx.forward(model.params)
    g = model.graph
    vpath, upath = out / "videos.emb", out / "users.emb"
    _write_vectors(vpath, g.keys[Kind.VIDEO], model.video_vectors(emb))
    _write_vectors(upath, g.keys[Kind.USER], model.user_vectors(None, emb))
    return vpath, upath


def read_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    keys, rows = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            key, _, vals = line.rstrip("\n").partition("\t")
            keys.append(key)
            rows.append(np.array(vals.split(), dtype=np.float32))
    return keys, np.array(rows, dtype=np.float32)
