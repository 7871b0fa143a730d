"""Categorical encoding, normalization, windowing, splits, and the IP vocabulary.

Ports and protocols map to fixed one-hot categories; specific ports take
precedence over the range rules. Numeric features are L2-normalized per
record so no global statistics are needed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, OutOfRangeError, TooFewWindowsError
from .flows import FlowRecord, IpAddr, format_ip, parse_ip
from .rng import seeded_rng

PORT_CATEGORIES = (
    "port0",
    "port53",
    "port123",
    "port443",
    "well_known",
    "registered",
    "dynamic_private",
)
PROTOCOL_CATEGORIES = ("icmp", "tcp", "udp", "other")

_SPECIFIC_PORTS = {0: 0, 53: 1, 123: 2, 443: 3}
_PROTOCOL_IDS = {1: 0, 6: 1, 17: 2}

SPLIT_LABELS = ("train", "val", "test")


@dataclass(frozen=True)
class OheSchema:
    """One-hot category labels for ports and protocols."""

    port_categories: tuple[str, ...] = PORT_CATEGORIES
    protocol_categories: tuple[str, ...] = PROTOCOL_CATEGORIES

    @property
    def n_port(self) -> int:
        return len(self.port_categories)

    @property
    def n_protocol(self) -> int:
        return len(self.protocol_categories)


DEFAULT_OHE = OheSchema()


def port_category(port: int) -> int:
    """Category index for a port; specific ports win over ranges."""
    if not 0 <= port <= 65535:
        raise OutOfRangeError(f"port out of range: {port}")
    if port in _SPECIFIC_PORTS:
        return _SPECIFIC_PORTS[port]
    if port <= 1023:
        return 4
    if port <= 49151:
        return 5
    return 6


def protocol_category(proto: int) -> int:
    if not 0 <= proto <= 255:
        raise OutOfRangeError(f"protocol out of range: {proto}")
    return _PROTOCOL_IDS.get(proto, 3)


def encode_port(port: int, schema: OheSchema = DEFAULT_OHE) -> tuple[np.ndarray, int]:
    """One-hot encode a port. Returns (vector of length 7, category index)."""
    idx = port_category(port)
    vec = np.zeros(schema.n_port)
    vec[idx] = 1.0
    return vec, idx


def encode_protocol(proto: int, schema: OheSchema = DEFAULT_OHE) -> np.ndarray:
    """One-hot encode a protocol number into a length-4 vector."""
    vec = np.zeros(schema.n_protocol)
    vec[protocol_category(proto)] = 1.0
    return vec


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm; the zero vector stays zero."""
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("cannot normalize a non-finite vector")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        return np.zeros_like(arr)
    return arr / norm


def build_connection_features(record: FlowRecord, schema: OheSchema = DEFAULT_OHE) -> np.ndarray:
    """Feature row for one connection: L2 numerics then protocol one-hot.

    Port information is deliberately absent; it travels on the graph
    edges instead.
    """
    return np.concatenate([l2_normalize(np.array(record.numerics)), encode_protocol(record.protocol, schema)])


@dataclass(frozen=True)
class Window:
    """A fixed-length block of time-ordered flows."""

    records: tuple[FlowRecord, ...]
    window_index: int


def make_windows(records: list[FlowRecord], length: int = 512, stride: int = 512) -> list[Window]:
    """Cut time-ordered records into non-overlapping fixed windows.

    The trailing partial window is dropped.
    """
    if length != stride:
        raise ValueError("windows are non-overlapping: length must equal stride")
    if length <= 0:
        raise ValueError("window length must be positive")
    n = len(records) // length
    return [Window(tuple(records[i * length : (i + 1) * length]), i) for i in range(n)]


@dataclass(frozen=True)
class SplitAssignment:
    """Per-window train/val/test labels plus the seed that produced them."""

    labels: tuple[str, ...]
    seed: int

    def indices(self, label: str) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == label]


def split_windows(
    windows: list[Window],
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Randomly assign windows to train/val/test in the given proportions."""
    n = len(windows)
    if n < 10:
        raise TooFewWindowsError(f"need at least 10 windows, got {n}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    perm = seeded_rng(seed).permutation(n)
    n_train = int(ratios[0] * n + 0.5)
    n_val = int(ratios[1] * n + 0.5)
    labels = [""] * n
    for pos, w in enumerate(perm):
        if pos < n_train:
            labels[w] = "train"
        elif pos < n_train + n_val:
            labels[w] = "val"
        else:
            labels[w] = "test"
    return SplitAssignment(tuple(labels), seed)


def save_split(split: SplitAssignment, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_index", "label", "seed"])
        for i, label in enumerate(split.labels):
            writer.writerow([i, label, split.seed])


def load_split(path) -> SplitAssignment:
    labels: list[str] = []
    seed = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            labels.append(row[1])
            seed = int(row[2])
    return SplitAssignment(tuple(labels), seed)


class IpVocabulary:
    """Maps IPs seen in training windows to contiguous ids; 0 is reserved
    for out-of-vocabulary addresses."""

    def __init__(self, ids: dict[IpAddr, int] | None = None):
        self._ids: dict[IpAddr, int] = dict(ids or {})

    def lookup(self, ip: IpAddr) -> int:
        return self._ids.get(ip, 0)

    def __len__(self) -> int:
        # Total id count, including the reserved OOV id 0.
        return len(self._ids) + 1

    def __contains__(self, ip: IpAddr) -> bool:
        return ip in self._ids

    def items(self):
        return self._ids.items()


def build_ip_vocabulary(train_windows: list[Window]) -> IpVocabulary:
    """Assign ids >= 1 to IPs by first appearance in the training windows."""
    if not train_windows:
        raise ValueError("training split is empty")
    ids: dict[IpAddr, int] = {}
    next_id = 1
    for window in train_windows:
        for r in window.records:
            for ip in (r.src_ip, r.dst_ip):
                if ip not in ids:
                    ids[ip] = next_id
                    next_id += 1
    return IpVocabulary(ids)


def save_vocabulary(vocab: IpVocabulary, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ip", "id"])
        for ip, id_ in sorted(vocab.items(), key=lambda kv: kv[1]):
            writer.writerow([format_ip(ip), id_])


def load_vocabulary(path) -> IpVocabulary:
    ids: dict[IpAddr, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ids[parse_ip(row[0])] = int(row[1])
    return IpVocabulary(ids)


def schema_hash(schema: OheSchema, n_numeric: int) -> str:
    """Stable fingerprint of the encoding layout, stored with checkpoints."""
    import hashlib

    text = "|".join(schema.port_categories) + "||" + "|".join(schema.protocol_categories)
    text += f"||F={n_numeric}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]
