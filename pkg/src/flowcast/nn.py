"""Parameters, initializers, the Adam optimizer, and checkpoint files."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ShapeMismatchError


@dataclass
class ForecastResult:
    """Model output for one forecast pair.

    numeric_pred holds the predicted L2-normalized numeric features;
    feature_pred additionally carries the protocol one-hot slots when
    the model emits them. Logits and attachments are keyed by relation
    (IP relations score vocabulary ids, port relations the 8 categories).
    """

    numeric_pred: np.ndarray
    feature_pred: np.ndarray | None
    logits: dict[str, np.ndarray]
    attachments: dict[str, np.ndarray]


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name


class Model:
    """Base class holding a uniquely named parameter registry."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def param(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        p = Parameter(data, name)
        self._params[name] = p
        return p

    def parameters(self) -> dict[str, Parameter]:
        return self._params

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            if state[name].shape != p.data.shape:
                raise ShapeMismatchError(
                    f"parameter {name!r}: checkpoint shape {state[name].shape} != model shape {p.data.shape}"
                )
            p.data = state[name].astype(np.float64).copy()


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def embedding_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=(rows, cols))


class Adam:
    """Adam with bias correction; the only optimizer in the toolkit."""

    def __init__(self, params: dict[str, Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1**self.t)
            v_hat = self.v[name] / (1 - b2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


_CKPT_MAGIC = b"FCK1"


def save_checkpoint(state: dict[str, np.ndarray], path) -> None:
    """Write parameters as name -> shape -> little-endian float64 runs,
    followed by a sha256 digest of everything before it."""
    body = struct.pack("<I", len(state))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        encoded = name.encode()
        body += struct.pack("<H", len(encoded)) + encoded
        body += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    payload = _CKPT_MAGIC + body
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(payload + digest)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 4 + 32 or blob[:4] != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    payload, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise ValueError("checkpoint digest mismatch")
    pos = 4
    (count,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        name = payload[pos : pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", payload, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, pos)
        pos += 4 * ndim
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
        state[name] = arr
    return state
