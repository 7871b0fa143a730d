"""Predictive masked graph autoencoder.

A heterogeneous GraphSAGE encoder (mean aggregation per relation, sum
across relations, shared widths per layer) maps the current window
graph to latent node embeddings. During training a learnable token
replaces a sampled fraction of connection rows and a fraction of edges
is dropped; both forward and reverse directions of a dropped edge
vanish together since the reverse lists are implied. An MLP decodes
connection embeddings back to feature rows without seeing the target
graph's edges, and a per-relation weighted dot product scores each
connection against candidate IP and Port nodes. The loss is
alpha * structural + (1 - alpha) * masked-feature error, and the
feature targets are the next window's rows at aligned positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyMaskError
from .graphs import EdgeSet, ForecastPair, StructuralTargets, WindowGraph, RELATIONS, N_PORT_NODES
from .nn import Model, embedding_init, xavier_uniform
from .rng import seeded_rng

NODE_TYPES = ("conn", "ip", "port")

# Incoming relations per node type. Connections receive from their
# endpoint nodes over the reverse directions; endpoints receive from
# connections over the forward directions.
_INCOMING = {
    "conn": ["src_ip", "dst_ip", "src_port", "dst_port"],
    "ip": ["src_ip", "dst_ip"],
    "port": ["src_port", "dst_port"],
}


@dataclass(frozen=True)
class GnnHyper:
    hidden_dim: int = 32
    latent_dim: int = 16
    n_layers: int = 2
    mask_ratio: float = 0.3
    edge_drop_p: float = 0.0
    alpha: float = 0.5
    dropout_p: float = 0.0
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.latent_dim <= 0 or self.n_layers <= 0:
            raise ValueError("dimensions and layer count must be positive")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0,1]")
        if not 0.0 <= self.edge_drop_p < 1.0:
            raise ValueError("edge_drop_p must lie in [0,1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0,1]")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0,1)")


def sample_mask_indices(n: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement of ceil(ratio * n) row indices."""
    count = math.ceil(ratio * n)
    if count == 0:
        return np.empty(0, dtype=np.int64)
    idx = rng.choice(n, size=count, replace=False)
    return np.sort(idx.astype(np.int64))


def apply_mask(
    g: WindowGraph, ratio: float, token: np.ndarray, rng: np.random.Generator
) -> tuple[WindowGraph, np.ndarray]:
    """Replace a sampled fraction of connection rows with the mask token.

    Edges and endpoint features are untouched. Returns the masked graph
    and the sorted mask index set.
    """
    idx = sample_mask_indices(g.n_conn, ratio, rng)
    feats = g.conn_features.copy()
    if len(idx):
        feats[idx] = np.asarray(token, dtype=float).reshape(1, -1)
    return replace(g, conn_features=feats), idx


def drop_edges(g: WindowGraph, p: float, rng: np.random.Generator) -> WindowGraph:
    """Independently drop each typed edge with probability p; the implied
    reverse copy disappears with it. Training-time only."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"edge drop probability must lie in [0,1), got {p}")
    if p == 0.0:
        return g
    edges = {}
    for rel in RELATIONS:
        es = g.edges[rel]
        keep = rng.random(len(es)) >= p
        edges[rel] = EdgeSet(es.conn[keep], es.target[keep])
    return replace(g, edges=edges)


def total_loss(struct: Tensor, feat: Tensor, alpha: float) -> Tensor:
    """Weighted sum alpha * struct + (1 - alpha) * feat."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0,1]")
    return struct * alpha + feat * (1.0 - alpha)


class GnnModel(Model):
    """Graph autoencoder over window graphs with a fixed vocabulary."""

    kind = "gnn"

    def __init__(
        self,
        feat_dim: int,
        vocab_size: int,
        hyper: GnnHyper = GnnHyper(),
        d_place: int = 8,
        seed: int = 0,
    ):
        super().__init__()
        self.feat_dim = feat_dim
        self.vocab_size = vocab_size
        self.hyper = hyper
        self.d_place = d_place
        self.seed = seed
        rng = seeded_rng(seed, 1)

        h = hyper.hidden_dim
        self.param("in.conn.w", xavier_uniform(rng, feat_dim, h))
        self.param("in.conn.b", np.zeros((1, h)))
        self.param("in.ip.w", xavier_uniform(rng, d_place, h))
        self.param("in.ip.b", np.zeros((1, h)))
        self.param("in.port.w", xavier_uniform(rng, d_place, h))
        self.param("in.port.b", np.zeros((1, h)))

        # Layer i maps hidden -> hidden except the last, which emits the latent width.
        self.layer_dims = []
        d_in = h
        for i in range(hyper.n_layers):
            d_out = hyper.latent_dim if i == hyper.n_layers - 1 else h
            self.layer_dims.append((d_in, d_out))
            for nt in NODE_TYPES:
                self.param(f"sage{i}.{nt}.self", xavier_uniform(rng, d_in, d_out))
                self.param(f"sage{i}.{nt}.b", np.zeros((1, d_out)))
                for rel in _INCOMING[nt]:
                    self.param(f"sage{i}.{nt}.from_{rel}", xavier_uniform(rng, d_in, d_out))
            d_in = d_out

        self.param("mask_token", embedding_init(rng, 1, feat_dim))
        self.param("dec.w1", xavier_uniform(rng, hyper.latent_dim, h))
        self.param("dec.b1", np.zeros((1, h)))
        self.param("dec.w2", xavier_uniform(rng, h, feat_dim))
        self.param("dec.b2", np.zeros((1, feat_dim)))
        for rel in RELATIONS:
            self.param(f"struct.w.{rel}", np.ones((1, hyper.latent_dim)))

    # -- encoder -----------------------------------------------------

    def _affine(self, x: Tensor, w: str, b: str) -> Tensor:
        return ad.add(ad.matmul(x, self._params[w]), self._params[b])

    def encode(
        self,
        g: WindowGraph,
        conn_x: Tensor | None = None,
        edges: dict[str, EdgeSet] | None = None,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> dict[str, Tensor]:
        """Latent embeddings per node type.

        Nodes with no surviving neighbors under a relation receive a
        zero aggregate for that relation.
        """
        edges = edges if edges is not None else g.edges
        h = {
            "conn": self._affine(conn_x if conn_x is not None else Tensor(g.conn_features), "in.conn.w", "in.conn.b"),
            "ip": self._affine(Tensor(g.ip_features), "in.ip.w", "in.ip.b"),
            "port": self._affine(Tensor(g.port_features), "in.port.w", "in.port.b"),
        }
        sizes = {"conn": g.n_conn, "ip": g.n_ip, "port": N_PORT_NODES}
        endpoint_of = {"src_ip": "ip", "dst_ip": "ip", "src_port": "port", "dst_port": "port"}
        for i in range(self.hyper.n_layers):
            final = i == self.hyper.n_layers - 1
            new_h = {}
            for nt in NODE_TYPES:
                acc = ad.matmul(h[nt], self._params[f"sage{i}.{nt}.self"])
                for rel in _INCOMING[nt]:
                    es = edges[rel]
                    other = endpoint_of[rel]
                    if nt == "conn":
                        # reverse direction: endpoint values flow to connections
                        values = ad.row_gather(h[other], es.target)
                        agg = ad.segment_mean(values, es.conn, sizes["conn"])
                    else:
                        values = ad.row_gather(h["conn"], es.conn)
                        agg = ad.segment_mean(values, es.target, sizes[nt])
                    acc = ad.add(acc, ad.matmul(agg, self._params[f"sage{i}.{nt}.from_{rel}"]))
                out = ad.add(acc, self._params[f"sage{i}.{nt}.b"])
                # The last layer stays linear: a relu here confines the
                # latents to the positive orthant, which starves the
                # dot-product decoder (most units go dead and stay dead).
                if not final:
                    out = ad.relu(out)
                    if training and self.hyper.dropout_p > 0.0:
                        out = ad.dropout(out, self.hyper.dropout_p, rng)
                new_h[nt] = out
            h = new_h
        return h

    # -- decoders ----------------------------------------------------

    def decode_features(self, conn_emb: Tensor) -> Tensor:
        """Row-wise MLP from latent embeddings to feature rows; never
        touches the target graph's edges."""
        hidden = ad.relu(self._affine(conn_emb, "dec.w1", "dec.b1"))
        return self._affine(hidden, "dec.w2", "dec.b2")

    def scatter_ip_embeddings(self, ip_emb: Tensor, ip_ids: np.ndarray) -> Tensor:
        """Place window IP embeddings at their vocabulary rows; absent
        vocabulary entries score as zero vectors."""
        return ad.segment_mean(ip_emb, ip_ids, self.vocab_size)

    def decode_structure(self, conn_emb: Tensor, ip_emb: Tensor, port_emb: Tensor) -> dict[str, Tensor]:
        """Weighted dot-product logits per relation: score(u, v) =
        sum_k w_rel[k] * z_u[k] * z_v[k]."""
        candidates = {"src_ip": ip_emb, "dst_ip": ip_emb, "src_port": port_emb, "dst_port": port_emb}
        scores = {}
        for rel in RELATIONS:
            weighted = ad.mul(conn_emb, self._params[f"struct.w.{rel}"])
            scores[rel] = ad.matmul(weighted, ad.transpose(candidates[rel]))
        return scores

    def struct_loss(self, scores: dict[str, Tensor], targets: StructuralTargets) -> Tensor:
        """Mean softmax cross-entropy over the four relations."""
        parts = [ad.softmax_cross_entropy(scores[rel], targets.by_relation(rel)) for rel in RELATIONS]
        return (parts[0] + parts[1] + parts[2] + parts[3]) * 0.25

    def feat_loss(self, pred: Tensor, next_features: np.ndarray, mask_idx: np.ndarray) -> Tensor:
        """MSE on the masked rows against the aligned next-window rows."""
        if len(mask_idx) == 0:
            raise EmptyMaskError("training feature loss needs a nonempty mask")
        return ad.mse_loss(ad.row_gather(pred, mask_idx), next_features[mask_idx])

    # -- training and inference ---------------------------------------

    def _masked_conn_input(self, g: WindowGraph, mask_idx: np.ndarray) -> Tensor:
        base = Tensor(g.conn_features)
        if len(mask_idx) == 0:
            return base
        sel = np.zeros((g.n_conn, 1))
        sel[mask_idx] = 1.0
        token_rows = ad.matmul(Tensor(sel), self._params["mask_token"])
        return ad.add(ad.mul(base, 1.0 - sel), token_rows)

    def loss(self, example, rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
        """Training loss on one forecast pair: (total, struct, feat)."""
        pair: ForecastPair = example.pair
        g = drop_edges(pair.current, self.hyper.edge_drop_p, rng)
        mask_idx = sample_mask_indices(g.n_conn, self.hyper.mask_ratio, rng)
        conn_x = self._masked_conn_input(g, mask_idx)
        h = self.encode(g, conn_x=conn_x, edges=g.edges, rng=rng, training=True)
        pred = self.decode_features(h["conn"])
        feat = self.feat_loss(pred, pair.next.conn_features, mask_idx)
        ip_full = self.scatter_ip_embeddings(h["ip"], g.ip_ids)
        scores = self.decode_structure(h["conn"], ip_full, h["port"])
        struct = self.struct_loss(scores, example.targets)
        return total_loss(struct, feat, self.hyper.alpha), struct, feat

    def forecast(self, example):
        """Inference on the current graph: no masking, no edge dropping.

        Returns predicted feature rows, per-relation logits, and argmax
        attachments (vocabulary ids for IPs, categories for ports).
        """
        from .nn import ForecastResult

        g = example.pair.current if hasattr(example, "pair") else example
        h = self.encode(g)
        pred = self.decode_features(h["conn"]).data
        ip_full = self.scatter_ip_embeddings(h["ip"], g.ip_ids)
        scores = self.decode_structure(h["conn"], ip_full, h["port"])
        logits = {rel: scores[rel].data for rel in RELATIONS}
        attach = {rel: logits[rel].argmax(axis=1) for rel in RELATIONS}
        return ForecastResult(
            numeric_pred=pred[:, : self.feat_dim - 4],
            feature_pred=pred,
            logits=logits,
            attachments=attach,
        )

    def sidecar_config(self) -> dict[str, str]:
        cfg = {
            "kind": self.kind,
            "feat_dim": str(self.feat_dim),
            "vocab_size": str(self.vocab_size),
            "d_place": str(self.d_place),
            "seed": str(self.seed),
        }
        for key, value in vars(self.hyper).items():
            cfg[key] = repr(value)
        return cfg
