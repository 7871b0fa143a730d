"""Heterogeneous window graphs and forecasting pairs.

Each window becomes a graph with three node types: one Connection node
per flow, one IP node per distinct endpoint address (out-of-vocabulary
addresses share a single node), and 8 Port nodes (7 port categories
plus a reserved node that never receives edges). Each connection has
four typed edges (src ip, dst ip, src port, dst port); graphs are
bidirectional, with the reverse direction implied by the forward lists,
so a dropped edge always loses both directions at once.
"""

from __future__ import annotations

import csv
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptError, VersionMismatchError
from .preprocess import (
    DEFAULT_OHE,
    IpVocabulary,
    OheSchema,
    Window,
    build_connection_features,
    port_category,
)

RELATIONS = ("src_ip", "dst_ip", "src_port", "dst_port")
IP_RELATIONS = ("src_ip", "dst_ip")
PORT_RELATIONS = ("src_port", "dst_port")

N_PORT_NODES = 8
RESERVED_PORT_INDEX = 7

_MAGIC = b"FGW1"
DEFAULT_D_PLACE = 8


@dataclass(frozen=True)
class EdgeSet:
    """Typed edges from connection nodes to one endpoint node type.

    conn[i] and target[i] are row indices; the reverse edge list is the
    (target, conn) transpose and is not stored.
    """

    conn: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.conn.shape != self.target.shape:
            raise ValueError("edge index arrays must have equal length")

    def reverse(self) -> tuple[np.ndarray, np.ndarray]:
        return self.target, self.conn

    def __len__(self) -> int:
        return len(self.conn)


@dataclass
class WindowGraph:
    window_index: int
    ip_ids: np.ndarray  # vocabulary ids of IP nodes, first-appearance order
    ip_features: np.ndarray  # (n_ip, d_place), all ones
    port_features: np.ndarray  # (8, d_place), all ones
    conn_features: np.ndarray  # (L, F+4)
    edges: dict[str, EdgeSet]

    @property
    def n_conn(self) -> int:
        return self.conn_features.shape[0]

    @property
    def n_ip(self) -> int:
        return self.ip_features.shape[0]

    @property
    def d_place(self) -> int:
        return self.ip_features.shape[1]


def build_graph(
    window: Window,
    vocab: IpVocabulary,
    schema: OheSchema = DEFAULT_OHE,
    d_place: int = DEFAULT_D_PLACE,
) -> WindowGraph:
    """Build the heterogeneous graph of one window.

    IP nodes carry placeholder all-ones features and are indexed by
    first appearance; unseen addresses collapse onto the vocabulary's
    OOV id 0. All 8 port nodes exist regardless of usage.
    """
    n = len(window.records)
    ip_rows: dict[int, int] = {}
    ip_order: list[int] = []
    src_ip_idx = np.empty(n, dtype=np.int64)
    dst_ip_idx = np.empty(n, dtype=np.int64)
    src_port_idx = np.empty(n, dtype=np.int64)
    dst_port_idx = np.empty(n, dtype=np.int64)
    feats = np.empty((n, len(window.records[0].numerics) + schema.n_protocol)) if n else np.empty((0, 0))

    for i, r in enumerate(window.records):
        for which, ip in (("src", r.src_ip), ("dst", r.dst_ip)):
            vid = vocab.lookup(ip)
            if vid not in ip_rows:
                ip_rows[vid] = len(ip_order)
                ip_order.append(vid)
            if which == "src":
                src_ip_idx[i] = ip_rows[vid]
            else:
                dst_ip_idx[i] = ip_rows[vid]
        src_port_idx[i] = port_category(r.src_port)
        dst_port_idx[i] = port_category(r.dst_port)
        feats[i] = build_connection_features(r, schema)

    conn = np.arange(n, dtype=np.int64)
    edges = {
        "src_ip": EdgeSet(conn, src_ip_idx),
        "dst_ip": EdgeSet(conn.copy(), dst_ip_idx),
        "src_port": EdgeSet(conn.copy(), src_port_idx),
        "dst_port": EdgeSet(conn.copy(), dst_port_idx),
    }
    return WindowGraph(
        window_index=window.window_index,
        ip_ids=np.asarray(ip_order, dtype=np.int64),
        ip_features=np.ones((len(ip_order), d_place)),
        port_features=np.ones((N_PORT_NODES, d_place)),
        conn_features=feats,
        edges=edges,
    )


@dataclass(frozen=True)
class ForecastPair:
    """A (current, next) pair of consecutive window graphs.

    Prediction slot i of the current graph corresponds to the i-th
    time-ordered flow of the next window.
    """

    current: WindowGraph
    next: WindowGraph


def pair_windows(graphs: list[WindowGraph]) -> list[ForecastPair]:
    """Pair graphs with consecutive window indices; gaps break pairing."""
    pairs = []
    for a, b in zip(graphs, graphs[1:]):
        if b.window_index == a.window_index + 1:
            pairs.append(ForecastPair(a, b))
    return pairs


@dataclass(frozen=True)
class StructuralTargets:
    """Attachment targets for each next-window connection: vocabulary ids
    for IPs, category indices for ports."""

    src_ip: np.ndarray
    dst_ip: np.ndarray
    src_port: np.ndarray
    dst_port: np.ndarray

    def by_relation(self, relation: str) -> np.ndarray:
        return getattr(self, relation)


def structural_targets(pair: ForecastPair) -> StructuralTargets:
    nxt = pair.next
    return StructuralTargets(
        src_ip=nxt.ip_ids[nxt.edges["src_ip"].target],
        dst_ip=nxt.ip_ids[nxt.edges["dst_ip"].target],
        src_port=nxt.edges["src_port"].target.copy(),
        dst_port=nxt.edges["dst_port"].target.copy(),
    )


@dataclass(frozen=True)
class ForecastExample:
    """One training/evaluation example: the graph pair, the raw current
    window (needed by the sequence baselines for octet lookups), and the
    precomputed attachment targets."""

    pair: ForecastPair
    current_window: Window | None
    targets: StructuralTargets


def make_examples(graphs: list[WindowGraph], windows: list[Window] | None = None) -> list[ForecastExample]:
    """Pair consecutive graphs and attach targets and source windows."""
    by_index = {w.window_index: w for w in windows} if windows else {}
    examples = []
    for pair in pair_windows(graphs):
        examples.append(
            ForecastExample(
                pair=pair,
                current_window=by_index.get(pair.current.window_index),
                targets=structural_targets(pair),
            )
        )
    return examples


def graph_attachments(g: WindowGraph) -> dict[str, np.ndarray]:
    """Per-connection attachment labels of a built graph (vocab ids for
    IP relations, categories for port relations)."""
    return {
        "src_ip": g.ip_ids[g.edges["src_ip"].target],
        "dst_ip": g.ip_ids[g.edges["dst_ip"].target],
        "src_port": g.edges["src_port"].target.copy(),
        "dst_port": g.edges["dst_port"].target.copy(),
    }


def _pack_array(arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr)
    header = struct.pack("<BB", {np.dtype("int64"): 0, np.dtype("float64"): 1}[data.dtype], data.ndim)
    dims = struct.pack(f"<{data.ndim}I", *data.shape)
    return header + dims + data.astype("<i8" if data.dtype == np.int64 else "<f8").tobytes()


class _Reader:
    def __init__(self, payload: bytes):
        self.buf = payload
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptError("payload truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def array(self) -> np.ndarray:
        kind, ndim = struct.unpack("<BB", self.take(2))
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        dtype = {0: "<i8", 1: "<f8"}.get(kind)
        if dtype is None:
            raise CorruptError(f"unknown array kind {kind}")
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def serialize_graph(g: WindowGraph) -> bytes:
    """Serialize to the versioned FGW1 binary format (little-endian,
    crc32-checked). Placeholder features are reconstructed from d_place
    on load, so only ids, connection features, and edges are stored."""
    body = struct.pack("<qII", g.window_index, g.d_place, len(g.ip_ids))
    body += _pack_array(g.ip_ids)
    body += _pack_array(g.conn_features)
    for rel in RELATIONS:
        es = g.edges[rel]
        body += struct.pack("<I", len(es))
        body += _pack_array(es.conn)
        body += _pack_array(es.target)
    return _MAGIC + struct.pack("<I", len(body)) + body + struct.pack("<I", zlib.crc32(body))


def deserialize_graph(data: bytes) -> WindowGraph:
    if len(data) < 8:
        raise CorruptError("too short for a graph header")
    magic = data[:4]
    if magic != _MAGIC:
        if magic[:3] == _MAGIC[:3]:
            raise VersionMismatchError(f"unsupported graph format version {magic!r}")
        raise CorruptError(f"bad magic {magic!r}")
    (length,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + length + 4:
        raise CorruptError("payload truncated")
    body = data[8 : 8 + length]
    (crc,) = struct.unpack("<I", data[8 + length : 12 + length])
    if zlib.crc32(body) != crc:
        raise CorruptError("checksum mismatch")
    r = _Reader(body)
    window_index, d_place, n_ip = struct.unpack("<qII", r.take(16))
    ip_ids = r.array()
    conn_features = r.array()
    edges = {}
    for rel in RELATIONS:
        (n_edges,) = struct.unpack("<I", r.take(4))
        conn = r.array()
        target = r.array()
        if len(conn) != n_edges:
            raise CorruptError("edge count mismatch")
        edges[rel] = EdgeSet(conn, target)
    return WindowGraph(
        window_index=int(window_index),
        ip_ids=ip_ids,
        ip_features=np.ones((n_ip, d_place)),
        port_features=np.ones((N_PORT_NODES, d_place)),
        conn_features=conn_features,
        edges=edges,
    )


def graph_file_name(window_index: int) -> str:
    return f"window_{window_index:06d}.fgw"


def save_graph_cache(graphs: list[WindowGraph], cache_dir) -> None:
    """Write one file per graph plus a manifest CSV."""
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    with open(cache / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "file", "n_ips"])
        for g in graphs:
            name = graph_file_name(g.window_index)
            (cache / name).write_bytes(serialize_graph(g))
            writer.writerow([g.window_index, name, g.n_ip])


def load_graph_cache(cache_dir) -> list[WindowGraph]:
    cache = Path(cache_dir)
    graphs = []
    with open(cache / "manifest.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            graphs.append(deserialize_graph((cache / row[1]).read_bytes()))
    graphs.sort(key=lambda g: g.window_index)
    return graphs
