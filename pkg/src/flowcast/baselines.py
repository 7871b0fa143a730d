"""Sequence baselines under a shared masked-autoencoder backbone.

Both baselines consume the same token sequence (octet embeddings for the
eight address bytes from one shared table plus per-slot offsets, port
category embeddings, the protocol one-hot, and the L2 numerics) and feed
the same two-head decoder. Only the middle is swapped: a trend/remainder
linear decomposition or an LSTM unrolled over the window. Masked
positions use dedicated extra embedding rows for categorical lookups and
a learnable vector for the numerics; the protocol one-hot is zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyMaskError
from .graphs import RELATIONS, ForecastExample
from .gnn import sample_mask_indices, total_loss
from .nn import ForecastResult, Model, embedding_init, xavier_uniform
from .rng import seeded_rng

OCTET_MASK_ID = 256
PORTCAT_MASK_ID = 8

BACKBONES = ("dlinear", "lstm")


@dataclass(frozen=True)
class BaselineHyper:
    d_oct: int = 8
    d_cat: int = 4
    hidden_dim: int = 32
    kernel: int = 25
    mask_ratio: float = 0.3
    alpha: float = 0.5
    dropout_p: float = 0.0
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.d_oct <= 0 or self.d_cat <= 0 or self.hidden_dim <= 0:
            raise ValueError("embedding and hidden widths must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be a positive odd integer")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0,1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0,1]")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0,1)")


@dataclass(frozen=True)
class TokenInputs:
    """Raw per-flow arrays feeding the token embedder."""

    octets: np.ndarray  # (L, 8) ints: src then dst address bytes
    src_cat: np.ndarray  # (L,) port categories
    dst_cat: np.ndarray
    proto_onehot: np.ndarray  # (L, 4)
    numerics: np.ndarray  # (L, F), already L2-normalized


def token_inputs(example: ForecastExample, n_numeric: int) -> TokenInputs:
    window = example.current_window
    if window is None:
        raise ValueError("sequence baselines need the raw current window for octet lookups")
    octets = np.array([r.src_ip + r.dst_ip for r in window.records], dtype=np.int64)
    g = example.pair.current
    return TokenInputs(
        octets=octets,
        src_cat=g.edges["src_port"].target,
        dst_cat=g.edges["dst_port"].target,
        proto_onehot=g.conn_features[:, n_numeric:],
        numerics=g.conn_features[:, :n_numeric],
    )


class BaselineModel(Model):
    """Masked autoencoder with a swappable sequence backbone."""

    def __init__(
        self,
        kind: str,
        n_numeric: int,
        vocab_size: int,
        seq_len: int,
        hyper: BaselineHyper = BaselineHyper(),
        seed: int = 0,
    ):
        if kind not in BACKBONES:
            raise ValueError(f"unknown backbone {kind!r}; expected one of {BACKBONES}")
        super().__init__()
        self.kind = kind
        self.n_numeric = n_numeric
        self.vocab_size = vocab_size
        self.seq_len = seq_len
        self.hyper = hyper
        self.seed = seed
        rng = seeded_rng(seed, 2)

        h = hyper.hidden_dim
        self.token_width = 8 * hyper.d_oct + 2 * hyper.d_cat + 4 + n_numeric
        self.param("emb.octet", embedding_init(rng, 257, hyper.d_oct))
        self.param("emb.octet_pos", embedding_init(rng, 8, hyper.d_oct))
        self.param("emb.portcat", embedding_init(rng, 9, hyper.d_cat))
        self.param("emb.numeric_mask", embedding_init(rng, 1, n_numeric))

        if kind == "dlinear":
            if hyper.kernel > seq_len:
                raise ValueError(f"kernel {hyper.kernel} exceeds window length {seq_len}")
            self.param("dl.trend", xavier_uniform(rng, seq_len, seq_len))
            self.param("dl.remainder", xavier_uniform(rng, seq_len, seq_len))
            self.param("dl.proj", xavier_uniform(rng, self.token_width, h))
            self.param("dl.proj_b", np.zeros((1, h)))
        else:
            for gate in ("i", "f", "g", "o"):
                self.param(f"lstm.w_{gate}", xavier_uniform(rng, self.token_width, h))
                self.param(f"lstm.u_{gate}", xavier_uniform(rng, h, h))
                self.param(f"lstm.b_{gate}", np.zeros((1, h)))

        self.param("head_s.w1", xavier_uniform(rng, h, h))
        self.param("head_s.b1", np.zeros((1, h)))
        for rel, width in (("src_ip", vocab_size), ("dst_ip", vocab_size), ("src_port", 8), ("dst_port", 8)):
            self.param(f"head_s.{rel}.w", xavier_uniform(rng, h, width))
            self.param(f"head_s.{rel}.b", np.zeros((1, width)))
        self.param("head_n.w1", xavier_uniform(rng, h, h))
        self.param("head_n.b1", np.zeros((1, h)))
        self.param("head_n.out.w", xavier_uniform(rng, h, n_numeric))
        self.param("head_n.out.b", np.zeros((1, n_numeric)))

    # -- encoder -------------------------------------------------------

    def embed_sequence(
        self, inputs: TokenInputs, rng: np.random.Generator | None = None, mask_ratio: float = 0.0
    ) -> tuple[Tensor, np.ndarray]:
        """Token matrix (L, token_width) plus the sampled mask index set."""
        n = inputs.octets.shape[0]
        mask_idx = sample_mask_indices(n, mask_ratio, rng) if mask_ratio > 0 else np.empty(0, dtype=np.int64)
        masked = np.zeros(n, dtype=bool)
        masked[mask_idx] = True

        pieces = []
        table = self._params["emb.octet"]
        pos = self._params["emb.octet_pos"]
        for j in range(8):
            ids = np.where(masked, OCTET_MASK_ID, inputs.octets[:, j])
            pieces.append(ad.add(ad.row_gather(table, ids), ad.row_gather(pos, np.full(n, j, dtype=np.int64))))
        for cats in (inputs.src_cat, inputs.dst_cat):
            ids = np.where(masked, PORTCAT_MASK_ID, cats)
            pieces.append(ad.row_gather(self._params["emb.portcat"], ids))

        proto = inputs.proto_onehot.copy()
        proto[masked] = 0.0
        pieces.append(Tensor(proto))

        sel = masked.astype(float)[:, None]
        numeric_rows = ad.add(
            ad.mul(Tensor(inputs.numerics), 1.0 - sel),
            ad.matmul(Tensor(sel), self._params["emb.numeric_mask"]),
        )
        pieces.append(numeric_rows)
        return ad.concat(pieces, axis=1), mask_idx

    # -- backbones -----------------------------------------------------

    def dlinear_forward(self, seq: Tensor) -> Tensor:
        """Trend/remainder decomposition, per-component time-axis linears,
        then a projection to the shared backbone width."""
        trend = ad.moving_average(seq, self.hyper.kernel)
        remainder = seq - trend
        mixed = ad.add(
            ad.matmul(self._params["dl.trend"], trend),
            ad.matmul(self._params["dl.remainder"], remainder),
        )
        return ad.add(ad.matmul(mixed, self._params["dl.proj"]), self._params["dl.proj_b"])

    def lstm_forward(self, seq: Tensor) -> Tensor:
        """Gated recurrence unrolled over the sequence; returns the
        hidden state at every step."""
        n = seq.shape[0]
        h = Tensor(np.zeros((1, self.hyper.hidden_dim)))
        c = Tensor(np.zeros((1, self.hyper.hidden_dim)))
        p = self._params
        outputs = []
        for t in range(n):
            x = ad.row_gather(seq, np.array([t]))
            i = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p["lstm.w_i"]), ad.matmul(h, p["lstm.u_i"])), p["lstm.b_i"]))
            f = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p["lstm.w_f"]), ad.matmul(h, p["lstm.u_f"])), p["lstm.b_f"]))
            g = ad.tanh(ad.add(ad.add(ad.matmul(x, p["lstm.w_g"]), ad.matmul(h, p["lstm.u_g"])), p["lstm.b_g"]))
            o = ad.sigmoid(ad.add(ad.add(ad.matmul(x, p["lstm.w_o"]), ad.matmul(h, p["lstm.u_o"])), p["lstm.b_o"]))
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
            outputs.append(h)
        return ad.concat(outputs, axis=0)

    def backbone_forward(self, seq: Tensor) -> Tensor:
        if self.kind == "dlinear":
            return self.dlinear_forward(seq)
        return self.lstm_forward(seq)

    # -- decoder ---------------------------------------------------------

    def decode_heads(self, seq_hidden: Tensor) -> tuple[dict[str, Tensor], Tensor]:
        """Row-wise structural logits per relation and numeric predictions."""
        p = self._params
        hs = ad.relu(ad.add(ad.matmul(seq_hidden, p["head_s.w1"]), p["head_s.b1"]))
        logits = {
            rel: ad.add(ad.matmul(hs, p[f"head_s.{rel}.w"]), p[f"head_s.{rel}.b"]) for rel in RELATIONS
        }
        hn = ad.relu(ad.add(ad.matmul(seq_hidden, p["head_n.w1"]), p["head_n.b1"]))
        numeric = ad.add(ad.matmul(hn, p["head_n.out.w"]), p["head_n.out.b"])
        return logits, numeric

    # -- training and inference ------------------------------------------

    def loss(self, example: ForecastExample, rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
        """(total, struct, feat) on one pair, mirroring the graph model's
        loss: cross-entropy on every position, MSE on masked numerics."""
        tokens, mask_idx = self.embed_sequence(token_inputs(example, self.n_numeric), rng, self.hyper.mask_ratio)
        if len(mask_idx) == 0:
            raise EmptyMaskError("training needs a nonempty mask")
        hidden = self.backbone_forward(tokens)
        if self.hyper.dropout_p > 0.0:
            hidden = ad.dropout(hidden, self.hyper.dropout_p, rng)
        logits, numeric = self.decode_heads(hidden)
        parts = [ad.softmax_cross_entropy(logits[rel], example.targets.by_relation(rel)) for rel in RELATIONS]
        struct = (parts[0] + parts[1] + parts[2] + parts[3]) * 0.25
        next_numerics = example.pair.next.conn_features[:, : self.n_numeric]
        feat = ad.mse_loss(ad.row_gather(numeric, mask_idx), next_numerics[mask_idx])
        return total_loss(struct, feat, self.hyper.alpha), struct, feat

    def forecast(self, example: ForecastExample) -> ForecastResult:
        tokens, _ = self.embed_sequence(token_inputs(example, self.n_numeric))
        hidden = self.backbone_forward(tokens)
        logits_t, numeric = self.decode_heads(hidden)
        logits = {rel: logits_t[rel].data for rel in RELATIONS}
        return ForecastResult(
            numeric_pred=numeric.data,
            feature_pred=None,
            logits=logits,
            attachments={rel: logits[rel].argmax(axis=1) for rel in RELATIONS},
        )

    def sidecar_config(self) -> dict[str, str]:
        cfg = {
            "kind": self.kind,
            "n_numeric": str(self.n_numeric),
            "vocab_size": str(self.vocab_size),
            "seq_len": str(self.seq_len),
            "seed": str(self.seed),
        }
        for key, value in vars(self.hyper).items():
            cfg[key] = repr(value)
        return cfg
