"""Dual graph storage: user-video and user-item bipartite adjacency with node features.

Nodes are addressed by dense per-kind integer indices. String keys from the raw
logs are mapped to indices in first-seen order and kept alongside the graph so
retrieval output can be reported by key.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MAGIC = b"GMNG1"


class Kind(enum.IntEnum):
    USER = 0
    VIDEO = 1
    ITEM = 2


KIND_NAMES = {Kind.USER: "user", Kind.VIDEO: "video", Kind.ITEM: "item"}


class LogFormatError(ValueError):
    """Raised for a malformed log or feature record; message carries the line number."""


@dataclass(frozen=True, order=True)
class NodeId:
    kind: Kind
    index: int


@dataclass(frozen=True)
class FeatureTable:
    """Categorical features for every node of one kind.

    ``ids[n, f]`` is the vocabulary index of field ``fields[f]`` for node ``n``.
    """

    fields: tuple[str, ...]
    vocab: tuple[int, ...]
    ids: np.ndarray

    def __post_init__(self):
        if self.ids.ndim != 2 or self.ids.shape[1] != len(self.fields):
            raise ValueError("feature id matrix must be (n_nodes, n_fields)")
        for f, (name, size) in enumerate(zip(self.fields, self.vocab)):
            col = self.ids[:, f]
            if col.size and (col.min() < 0 or col.max() >= size):
                raise ValueError(f"feature id out of vocabulary for field {name!r}")

    @classmethod
    def identity(cls, kind: Kind, n: int) -> "FeatureTable":
        """One ID field per node, used when no feature table is supplied."""
        return cls((f"{KIND_NAMES[kind]}_id",), (max(n, 1),), np.arange(n, dtype=np.int64)[:, None])


@dataclass
class IngestReport:
    records: int = 0
    duplicates: int = 0
    skipped_unknown: int = 0


def _csr(n_rows: int, rows: np.ndarray, cols: np.ndarray, times: np.ndarray):
    order = np.lexsort((cols, rows))
    rows, cols, times = rows[order], cols[order], times[order]
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64), times.astype(np.int64)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class DualGraph:
    """Immutable dual bipartite graph.

    Forward adjacency (user -> targets) is stored in CSR form, sorted by target
    index; reverse adjacency (target -> users) is derived on construction.
    """

    def __init__(
        self,
        n_users: int,
        n_videos: int,
        n_items: int,
        uv: tuple[np.ndarray, np.ndarray, np.ndarray],
        ui: tuple[np.ndarray, np.ndarray, np.ndarray],
        features: Mapping[Kind, FeatureTable] | None = None,
        keys: Mapping[Kind, Sequence[str]] | None = None,
    ):
        self.n_users, self.n_videos, self.n_items = int(n_users), int(n_videos), int(n_items)
        self.uv_indptr, self.uv_indices, self.uv_times = (_frozen(a) for a in uv)
        self.ui_indptr, self.ui_indices, self.ui_times = (_frozen(a) for a in ui)
        for name, (ptr, idx, n_t) in {
            "user-video": (self.uv_indptr, self.uv_indices, self.n_videos),
            "user-item": (self.ui_indptr, self.ui_indices, self.n_items),
        }.items():
            if len(ptr) != self.n_users + 1:
                raise ValueError(f"{name} indptr length mismatch")
            if idx.size and (idx.min() < 0 or idx.max() >= n_t):
                raise ValueError(f"{name} target index out of range")
        counts = {Kind.USER: self.n_users, Kind.VIDEO: self.n_videos, Kind.ITEM: self.n_items}
        features = dict(features or {})
        for kind, n in counts.items():
            if kind not in features:
                features[kind] = FeatureTable.identity(kind, n)
            elif features[kind].ids.shape[0] != n:
                raise ValueError(f"{KIND_NAMES[kind]} feature rows != node count")
            features[kind].ids.flags.writeable = False
        self.features: dict[Kind, FeatureTable] = features
        if keys is None:
            keys = {k: [f"{KIND_NAMES[k][0]}{i}" for i in range(n)] for k, n in counts.items()}
        self.keys: dict[Kind, tuple[str, ...]] = {k: tuple(keys[k]) for k in Kind}
        for kind, n in counts.items():
            if len(self.keys[kind]) != n:
                raise ValueError(f"{KIND_NAMES[kind]} key count != node count")
        self._key_index = {k: {key: i for i, key in enumerate(self.keys[k])} for k in Kind}
        self.vu_indptr, self.vu_indices = self._reverse(self.uv_indptr, self.uv_indices, self.n_videos)
        self.iu_indptr, self.iu_indices = self._reverse(self.ui_indptr, self.ui_indices, self.n_items)
        self.report = IngestReport()

    @classmethod
    def from_edges(
        cls,
        n_users: int,
        n_videos: int,
        n_items: int,
        uv_edges: np.ndarray,
        ui_edges: np.ndarray,
        features: Mapping[Kind, FeatureTable] | None = None,
        keys: Mapping[Kind, Sequence[str]] | None = None,
    ) -> "DualGraph":
        """Build from ``(user, target, timestamp)`` integer rows; duplicates keep the latest timestamp."""
        parts = []
        for edges, n_t in ((uv_edges, n_videos), (ui_edges, n_items)):
            e = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
            # keep the most recent copy of each (user, target) pair
            order = np.lexsort((-e[:, 2], e[:, 1], e[:, 0]))
            e = e[order]
            keep = np.ones(len(e), dtype=bool)
            keep[1:] = (e[1:, 0] != e[:-1, 0]) | (e[1:, 1] != e[:-1, 1])
            e = e[keep]
            parts.append(_csr(n_users, e[:, 0], e[:, 1], e[:, 2]))
        return cls(n_users, n_videos, n_items, parts[0], parts[1], features, keys)

    @staticmethod
    def _reverse(indptr, indices, n_targets):
        rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
        order = np.lexsort((rows, indices))
        rptr = np.zeros(n_targets + 1, dtype=np.int64)
        np.add.at(rptr, indices + 1, 1)
        return _frozen(np.cumsum(rptr)), _frozen(rows[order].astype(np.int64))

    def count(self, kind: Kind) -> int:
        return (self.n_users, self.n_videos, self.n_items)[kind]

    def node(self, kind: Kind, key: str) -> NodeId:
        try:
            return NodeId(kind, self._key_index[kind][key])
        except KeyError:
            raise KeyError(f"unknown {KIND_NAMES[kind]} key {key!r}") from None

    def key(self, node: NodeId) -> str:
        return self.keys[node.kind][node.index]

    def user_videos(self, u: int) -> np.ndarray:
        return self.uv_indices[self.uv_indptr[u] : self.uv_indptr[u + 1]]

    def user_video_times(self, u: int) -> np.ndarray:
        return self.uv_times[self.uv_indptr[u] : self.uv_indptr[u + 1]]

    def user_items(self, u: int) -> np.ndarray:
        return self.ui_indices[self.ui_indptr[u] : self.ui_indptr[u + 1]]

    def user_item_times(self, u: int) -> np.ndarray:
        return self.ui_times[self.ui_indptr[u] : self.ui_indptr[u + 1]]

    def video_users(self, v: int) -> np.ndarray:
        return self.vu_indices[self.vu_indptr[v] : self.vu_indptr[v + 1]]

    def item_users(self, i: int) -> np.ndarray:
        return self.iu_indices[self.iu_indptr[i] : self.iu_indptr[i + 1]]

    @property
    def n_uv_edges(self) -> int:
        return int(self.uv_indices.size)

    @property
    def n_ui_edges(self) -> int:
        return int(self.ui_indices.size)

    def uv_edge_array(self) -> np.ndarray:
        """All user-video edges as ``(user, video, timestamp)`` rows."""
        rows = np.repeat(np.arange(self.n_users), np.diff(self.uv_indptr))
        return np.stack([rows, self.uv_indices, self.uv_times], axis=1)

    def ui_edge_array(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.n_users), np.diff(self.ui_indptr))
        return np.stack([rows, self.ui_indices, self.ui_times], axis=1)

    def schema(self) -> dict[Kind, list[tuple[str, int]]]:
        return {k: list(zip(t.fields, t.vocab)) for k, t in self.features.items()}

    def __repr__(self):
        return (
            f"DualGraph(users={self.n_users}, videos={self.n_videos}, items={self.n_items}, "
            f"uv_edges={self.n_uv_edges}, ui_edges={self.n_ui_edges})"
        )


# ---------------------------------------------------------------- ingestion


def _parse_edge(line: str, lineno: int, source: str):
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 3 or not parts[0] or not parts[1]:
        raise LogFormatError(f"{source} line {lineno}: expected 'user\\ttarget\\ttimestamp', got {line!r}")
    try:
        ts = int(parts[2])
    except ValueError:
        raise LogFormatError(f"{source} line {lineno}: bad timestamp {parts[2]!r}") from None
    return parts[0], parts[1], ts


def _parse_features(lines: Iterable[str]) -> dict[str, dict[str, int]]:
    table: dict[str, dict[str, int]] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 2 or not parts[0]:
            raise LogFormatError(f"features line {lineno}: expected 'key\\tfield:index ...'")
        feats = table.setdefault(parts[0], {})
        for tok in parts[1:]:
            name, sep, idx = tok.rpartition(":")
            if not sep or not name:
                raise LogFormatError(f"features line {lineno}: bad field token {tok!r}")
            try:
                value = int(idx)
            except ValueError:
                raise LogFormatError(f"features line {lineno}: bad vocab index {idx!r}") from None
            if value < 0:
                raise LogFormatError(f"features line {lineno}: negative vocab index")
            feats[name] = value
    return table


def ingest_logs(
    uv_log: Iterable[str],
    ui_log: Iterable[str],
    feature_table: Iterable[str] | None = None,
) -> DualGraph:
    """Build a :class:`DualGraph` from tab-separated interaction logs.

    When a feature table is given, it defines the node universe: edges naming a
    key absent from it are skipped and counted in ``graph.report``. Without one,
    each kind gets a single ID field.
    """
    feats = _parse_features(feature_table) if feature_table is not None else None
    report = IngestReport()
    keymaps: dict[Kind, dict[str, int]] = {k: {} for k in Kind}
    edges: dict[Kind, list[tuple[int, int, int]]] = {Kind.VIDEO: [], Kind.ITEM: []}

    def ident(kind, key):
        m = keymaps[kind]
        if key not in m:
            m[key] = len(m)
        return m[key]

    for target_kind, log, source in ((Kind.VIDEO, uv_log, "video log"), (Kind.ITEM, ui_log, "item log")):
        for lineno, line in enumerate(log, 1):
            if not line.strip():
                continue
            ukey, tkey, ts = _parse_edge(line, lineno, source)
            report.records += 1
            if feats is not None and (ukey not in feats or tkey not in feats):
                report.skipped_unknown += 1
                continue
            edges[target_kind].append((ident(Kind.USER, ukey), ident(target_kind, tkey), ts))

    for kind in (Kind.VIDEO, Kind.ITEM):
        pairs = {(u, t) for u, t, _ in edges[kind]}
        report.duplicates += len(edges[kind]) - len(pairs)

    keys = {k: list(keymaps[k]) for k in Kind}
    features = None
    if feats is not None:
        features = {}
        for kind in Kind:
            names = sorted({f for key in keys[kind] for f in feats[key]})
            ids = np.zeros((len(keys[kind]), len(names)), dtype=np.int64)
            for n, key in enumerate(keys[kind]):
                row = feats[key]
                for f, name in enumerate(names):
                    if name not in row:
                        raise LogFormatError(f"{KIND_NAMES[kind]} {key!r} lacks field {name!r}")
                    ids[n, f] = row[name]
            vocab = tuple(int(ids[:, f].max()) + 1 if len(ids) else 1 for f in range(len(names)))
            if not names:
                features[kind] = FeatureTable.identity(kind, len(keys[kind]))
            else:
                features[kind] = FeatureTable(tuple(names), vocab, ids)

    def arr(rows):
        return np.array(rows, dtype=np.int64).reshape(-1, 3)

    g = DualGraph.from_edges(
        len(keys[Kind.USER]), len(keys[Kind.VIDEO]), len(keys[Kind.ITEM]),
        arr(edges[Kind.VIDEO]), arr(edges[Kind.ITEM]), features, keys,
    )
    g.report = report
    return g


# ---------------------------------------------------------------- subgraphs


@dataclass(frozen=True)
class UserSubgraph:
    user: NodeId
    videos: list[NodeId] = field(default_factory=list)
    items: list[NodeId] = field(default_factory=list)


def _recent(targets: np.ndarray, times: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    # most recent first; equal timestamps broken by a seeded shuffle
    tiebreak = rng.permutation(len(targets))
    order = np.lexsort((tiebreak, -times))
    return targets[order[:cap]]


def extract_subgraph(g: DualGraph, u: NodeId, cap_v: int = 50, cap_i: int = 50, rng_seed: int = 0) -> UserSubgraph:
    if u.kind != Kind.USER:
        raise ValueError("extract_subgraph expects a user node")
    rng = np.random.default_rng([rng_seed, u.index])
    videos = _recent(g.user_videos(u.index), g.user_video_times(u.index), cap_v, rng)
    items = _recent(g.user_items(u.index), g.user_item_times(u.index), cap_i, rng)
    return UserSubgraph(
        u,
        [NodeId(Kind.VIDEO, int(v)) for v in videos],
        [NodeId(Kind.ITEM, int(i)) for i in items],
    )


def subgraph_table(g: DualGraph, cap_v: int, cap_i: int, rng_seed: int = 0):
    """Padded neighbor tables for every user.

    Returns ``(videos, n_videos, items, n_items)`` where ``videos[u, :n_videos[u]]``
    equals ``extract_subgraph(g, u).videos`` and the padding is ``-1``.
    """
    vids = np.full((g.n_users, max(cap_v, 1)), -1, dtype=np.int64)
    its = np.full((g.n_users, max(cap_i, 1)), -1, dtype=np.int64)
    nv = np.zeros(g.n_users, dtype=np.int64)
    ni = np.zeros(g.n_users, dtype=np.int64)
    for u in range(g.n_users):
        rng = np.random.default_rng([rng_seed, u])
        v = _recent(g.user_videos(u), g.user_video_times(u), cap_v, rng)
        i = _recent(g.user_items(u), g.user_item_times(u), cap_i, rng)
        vids[u, : len(v)] = v
        its[u, : len(i)] = i
        nv[u], ni[u] = len(v), len(i)
    return vids, nv, its, ni


# ---------------------------------------------------------------- persistence


def _w(buf, fmt, *vals):
    buf.write(struct.pack("<" + fmt, *vals))


def _warr(buf, a):
    buf.write(np.ascontiguousarray(a, dtype="<i8").tobytes())


def graph_to_bytes(g: DualGraph) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    _w(buf, "QQQ", g.n_users, g.n_videos, g.n_items)
    for ptr, idx, ts in ((g.uv_indptr, g.uv_indices, g.uv_times), (g.ui_indptr, g.ui_indices, g.ui_times)):
        _w(buf, "Q", idx.size)
        _warr(buf, ptr)
        _warr(buf, idx)
        _warr(buf, ts)
    for kind in Kind:
        t = g.features[kind]
        _w(buf, "I", len(t.fields))
        for name, size in zip(t.fields, t.vocab):
            raw = name.encode("utf-8")
            _w(buf, "I", len(raw))
            buf.write(raw)
            _w(buf, "Q", size)
        _warr(buf, t.ids)
    return buf.getvalue()


def keys_to_text(g: DualGraph) -> str:
    lines = [f"{KIND_NAMES[k]}\t{i}\t{key}\n" for k in Kind for i, key in enumerate(g.keys[k])]
    return "".join(lines)


def graph_from_bytes(data: bytes, keys_text: str | None = None) -> DualGraph:
    if data[:5] != MAGIC:
        raise ValueError("not a GMNG1 graph file")
    view = memoryview(data)
    pos = 5

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from("<" + fmt, view, pos)
        pos += struct.calcsize("<" + fmt)
        return vals

    def take_arr(n):
        nonlocal pos
        a = np.frombuffer(view, dtype="<i8", count=n, offset=pos).astype(np.int64)
        pos += 8 * n
        return a

    n_users, n_videos, n_items = take("QQQ")
    rels = []
    for _ in range(2):
        (m,) = take("Q")
        rels.append((take_arr(n_users + 1), take_arr(m), take_arr(m)))
    features = {}
    for kind, n in zip(Kind, (n_users, n_videos, n_items)):
        (nf,) = take("I")
        names, vocab = [], []
        for _ in range(nf):
            (ln,) = take("I")
            names.append(bytes(view[pos : pos + ln]).decode("utf-8"))
            pos += ln
            vocab.append(take("Q")[0])
        features[kind] = FeatureTable(tuple(names), tuple(vocab), take_arr(n * nf).reshape(n, nf))
    keys = None
    if keys_text is not None:
        keys = {k: [] for k in Kind}
        by_name = {v: k for k, v in KIND_NAMES.items()}
        for line in keys_text.splitlines():
            kname, _, key = line.split("\t", 2)
            keys[by_name[kname]].append(key)
    return DualGraph(n_users, n_videos, n_items, rels[0], rels[1], features, keys)


def save_graph(g: DualGraph, path: str | Path) -> None:
    """Write the binary graph to ``path`` and the key mapping to ``path + '.keys'``."""
    path = Path(path)
    path.write_bytes(graph_to_bytes(g))
    Path(str(path) + ".keys").write_text(keys_to_text(g), encoding="utf-8", newline="\n")


def load_graph(path: str | Path) -> DualGraph:
    path = Path(path)
    sidecar = Path(str(path) + ".keys")
    keys_text = sidecar.read_text(encoding="utf-8") if sidecar.exists() else None
    return graph_from_bytes(path.read_bytes(), keys_text)
