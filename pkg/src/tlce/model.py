"""Shared embedding architecture: backbone F, projection G, optional head W.

RHD and TKN are two instances of the same :class:`ArchitectureSpec` that
differ only in parameter values and in which head (if any) they carry.
"""

from __future__ import annotations

import copy
import hashlib
import io
import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from . import numerics as nx
from .binio import ByteReader, write_tensor
from .errors import ConfigError, DimensionError, FormatError
from .numerics import Tensor

HEAD_NONE = "none"
HEAD_CE = "ce"
HEAD_COSINE = "cosine"
_HEAD_CODES = {HEAD_NONE: 0, HEAD_CE: 1, HEAD_COSINE: 2}
_HEAD_NAMES = {v: k for k, v in _HEAD_CODES.items()}

CHECKPOINT_MAGIC = b"TLCE"
CHECKPOINT_VERSION = 1
KIND_PARAMS = 0
KIND_MEMORY = 1


@dataclass(frozen=True)
class ArchitectureSpec:
    """MLP backbone widths plus projection width.

    The backbone is ``input_dim -> hidden_layers... -> feature_dim`` with a
    rectifier between consecutive layers (none after the last); the projection
    is a single linear layer ``feature_dim -> embedding_dim``.
    """

    input_dim: int
    hidden_layers: tuple[int, ...] = ()
    feature_dim: int = 512
    embedding_dim: int = 512

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        widths = (self.input_dim, *self.hidden_layers, self.feature_dim, self.embedding_dim)
        if any(int(w) <= 0 for w in widths):
            raise ConfigError(f"all layer widths must be positive, got {widths}")

    @property
    def backbone_widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.feature_dim)


@dataclass
class NetworkParams:
    spec: ArchitectureSpec
    theta1: list[tuple[Tensor, Tensor]]
    theta2: tuple[Tensor, Tensor]
    head: str = HEAD_NONE
    head_W: Tensor | None = None
    head_b: Tensor | None = None

    @property
    def num_classes(self) -> int:
        return 0 if self.head_W is None else self.head_W.shape[0]

    def tensors(self) -> list[Tensor]:
        """All parameter tensors in a fixed order (the checkpoint order)."""
        out = [t for layer in self.theta1 for t in layer]
        out.extend(self.theta2)
        if self.head_W is not None:
            out.append(self.head_W)
        if self.head_b is not None:
            out.append(self.head_b)
        return out

    def trainable(self) -> list[Tensor]:
        return [t for t in self.tensors() if t.requires_grad]

    def copy(self) -> NetworkParams:
        return copy.deepcopy(self)

    def without_head(self) -> NetworkParams:
        out = self.copy()
        out.head, out.head_W, out.head_b = HEAD_NONE, None, None
        return out

    def freeze(self) -> NetworkParams:
        for t in self.tensors():
            t.requires_grad = False
            t.grad = None
        return self

    def digest(self) -> str:
        return hashlib.sha256(params_to_bytes(self)).hexdigest()


def init_params(
    spec: ArchitectureSpec,
    seed: int,
    head: str = HEAD_NONE,
    num_classes: int = 0,
) -> NetworkParams:
    """He-normal weights (std sqrt(2/fan_in)), zero biases."""
    if head not in _HEAD_CODES:
        raise ConfigError(f"unknown head {head!r}")
    if head != HEAD_NONE and num_classes < 1:
        raise ConfigError("a classification head needs num_classes >= 1")
    rng = np.random.default_rng(seed)

    def linear(n_in: int, n_out: int) -> tuple[Tensor, Tensor]:
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        return Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True)

    widths = spec.backbone_widths
    theta1 = [linear(a, b) for a, b in zip(widths[:-1], widths[1:])]
    theta2 = linear(spec.feature_dim, spec.embedding_dim)
    head_W = head_b = None
    if head != HEAD_NONE:
        w = rng.normal(0.0, np.sqrt(2.0 / spec.embedding_dim), size=(num_classes, spec.embedding_dim))
        head_W = Tensor(w, requires_grad=True)
        if head == HEAD_CE:
            head_b = Tensor(np.zeros(num_classes), requires_grad=True)
    return NetworkParams(spec, theta1, theta2, head, head_W, head_b)


def _check_input(params: NetworkParams, x: Tensor) -> None:
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise DimensionError(
            f"expected input of shape (batch, {params.spec.input_dim}), got {x.shape}"
        )


def forward_embed(params: NetworkParams, x) -> tuple[Tensor, Tensor]:
    """Return (mu1, mu2): backbone features and projected embedding."""
    x = nx.as_tensor(x)
    _check_input(params, x)
    h = x
    last = len(params.theta1) - 1
    for i, (w, b) in enumerate(params.theta1):
        h = h @ w + b
        if i < last:
            h = nx.relu(h)
    mu1 = h
    w2, b2 = params.theta2
    mu2 = mu1 @ w2 + b2
    return mu1, mu2


def embed(params: NetworkParams, x) -> np.ndarray:
    """Projected embeddings as a plain array, without recording a graph."""
    with nx.no_grad():
        return forward_embed(params, x)[1].data


def forward_logits_ce(params: NetworkParams, x) -> Tensor:
    if params.head_W is None:
        raise ConfigError("network has no classification head")
    _, mu2 = forward_embed(params, x)
    logits = mu2 @ params.head_W.T
    if params.head_b is not None:
        logits = logits + params.head_b
    return logits


def forward_logits_cosine(params: NetworkParams, x) -> Tensor:
    """Bias-free logits cos(mu2, W_i), with both sides unit-normalised on the fly."""
    if params.head_W is None:
        raise ConfigError("network has no classification head")
    if params.head_b is not None:
        raise ConfigError("cosine head must be bias-free")
    _, mu2 = forward_embed(params, x)
    return nx.cosine_matrix(mu2, params.head_W)


# -- checkpoint container -----------------------------------------------------


def write_header(buf: BinaryIO, kind: int) -> None:
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, kind))


def read_header(r: ByteReader, kind: int) -> None:
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad magic, expected TLCE", 0)
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    got = r.u32("kind")
    if got != kind:
        names = {KIND_PARAMS: "parameters", KIND_MEMORY: "memory"}
        raise FormatError(
            f"checkpoint holds {names.get(got, got)}, expected {names[kind]}", 8
        )


def params_to_bytes(params: NetworkParams) -> bytes:
    buf = io.BytesIO()
    write_header(buf, KIND_PARAMS)
    s = params.spec
    buf.write(struct.pack("<II", s.input_dim, len(s.hidden_layers)))
    buf.write(struct.pack(f"<{len(s.hidden_layers)}I", *s.hidden_layers))
    buf.write(struct.pack("<II", s.feature_dim, s.embedding_dim))
    buf.write(struct.pack("<II", _HEAD_CODES[params.head], params.num_classes))
    tensors = params.tensors()
    buf.write(struct.pack("<I", len(tensors)))
    for t in tensors:
        write_tensor(buf, t.data)
    return buf.getvalue()


def params_from_bytes(data: bytes) -> NetworkParams:
    r = ByteReader(data)
    read_header(r, KIND_PARAMS)
    input_dim = r.u32("input_dim")
    hidden = tuple(r.u32("hidden width") for _ in range(r.u32("hidden count")))
    feature_dim, embedding_dim = r.u32("feature_dim"), r.u32("embedding_dim")
    head_code, num_classes = r.u32("head"), r.u32("num_classes")
    if head_code not in _HEAD_NAMES:
        raise FormatError(f"unknown head code {head_code}", r.pos - 8)
    try:
        spec = ArchitectureSpec(input_dim, hidden, feature_dim, embedding_dim)
    except ConfigError as exc:
        raise FormatError(str(exc), 12) from None
    head = _HEAD_NAMES[head_code]
    template = init_params(spec, 0, head, num_classes)
    expected = template.tensors()
    count_at = r.pos
    count = r.u32("tensor count")
    if count != len(expected):
        raise FormatError(f"expected {len(expected)} tensors, found {count}", count_at)
    for i, t in enumerate(expected):
        at = r.pos
        arr = r.tensor(f"tensor {i}")
        if arr.shape != t.shape:
            raise FormatError(f"tensor {i} has shape {arr.shape}, expected {t.shape}", at)
        t.data = arr
    r.finish()
    return template


def save_params(params: NetworkParams, path) -> None:
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_params(path) -> NetworkParams:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())
