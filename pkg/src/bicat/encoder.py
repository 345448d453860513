"""Causal self-attention sequence encoder with a shared item table.

Inputs are left-padded item-index matrices of shape ``(batch, m)`` with
``m <= n``. Positions are right-aligned: the last column always uses
position ``n - 1``, so a shorter input reuses the tail of the position
table. The item table is stored row-major as ``(|V| + 1, d)``; row 0 is
the padding embedding and stays zero.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CompatibilityError, FormatError
from .numerics import NEG_INF, Parameter, Tensor, dropout, layer_norm, softmax

CHECKPOINT_MAGIC = b"BICATCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    n: int = 50
    d: int = 64
    heads: int = 2
    layers: int = 2
    dropout: float = 0.2
    scale: str = "head"  # "head": sqrt(d/h); "model": sqrt(d) literally
    ln_eps: float = 1e-8

    def __post_init__(self):
        if self.n < 1 or self.layers < 1 or self.d < 1 or self.heads < 1:
            raise ValueError(f"invalid encoder shape {self}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")
        if self.scale not in ("head", "model"):
            raise ValueError(f"unknown attention scale {self.scale!r}")

    @property
    def head_dim(self):
        return self.d // self.heads

    def param_count(self, num_items):
        d = self.d
        return (num_items + 1) * d + self.n * d + self.layers * (6 * d * d + 6 * d)


LAYER_PARAMS = ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2",
                "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias")


class ModelParams:
    """All learnable arrays, addressable by name.

    Per layer, ``wq``/``wk``/``wv`` are ``d x d`` matrices whose column
    blocks of width ``d/h`` are the per-head projections.
    """

    def __init__(self, config: EncoderConfig, num_items: int, tensors: dict):
        self.config = config
        self.num_items = num_items
        self.tensors = tensors

    @classmethod
    def init(cls, config: EncoderConfig, num_items: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        d, bound = config.d, 1.0 / math.sqrt(config.d)

        def uni(*shape):
            return rng.uniform(-bound, bound, size=shape)

        table = uni(num_items + 1, d)
        table[0] = 0.0
        t = {"item_table": table, "pos_table": uni(config.n, d)}
        for l in range(config.layers):
            for w in ("wq", "wk", "wv", "wo", "w1", "w2"):
                t[f"layer{l}.{w}"] = uni(d, d)
            for b in ("b1", "b2", "ln1_bias", "ln2_bias"):
                t[f"layer{l}.{b}"] = np.zeros(d)
            for g in ("ln1_gain", "ln2_gain"):
                t[f"layer{l}.{g}"] = np.ones(d)
        return cls(config, num_items, {k: Parameter(v, k) for k, v in t.items()})

    def __getitem__(self, name):
        return self.tensors[name]

    def layer(self, l):
        return {k: self.tensors[f"layer{l}.{k}"] for k in LAYER_PARAMS}

    @property
    def item_table(self):
        return self.tensors["item_table"]

    def parameters(self):
        return list(self.tensors.values())

    def zero_grad(self):
        for p in self.tensors.values():
            p.zero_grad()

    def rezero_padding(self):
        self.item_table.data[0] = 0.0

    def copy(self):
        return ModelParams(self.config, self.num_items,
                           {k: Parameter(p.data.copy(), k) for k, p in self.tensors.items()})

    def state(self):
        return {k: p.data for k, p in self.tensors.items()}

    def count(self):
        return sum(p.data.size for p in self.tensors.values())


# -- forward pieces ------------------------------------------------------------

def _as_batch(items):
    items = np.asarray(items, dtype=np.int64)
    return items[None, :] if items.ndim == 1 else items


def embed(items, params: ModelParams) -> Tensor:
    """``e_i + p_i`` for every position; output ``(batch, m, d)``."""
    items = _as_batch(items)
    m = items.shape[1]
    if m > params.config.n:
        raise IndexError(f"input length {m} exceeds n={params.config.n}")
    if items.min(initial=0) < 0 or items.max(initial=0) > params.num_items:
        raise IndexError(f"item index outside [0, {params.num_items}]")
    e = params.item_table.take_rows(items)
    # padding rows read zero and never send gradient into row 0
    e = e * Tensor((items != 0)[..., None].astype(float))
    p = params["pos_table"][params.config.n - m:]
    return e + p


def attention_mask(items) -> np.ndarray:
    """Additive mask ``(batch, 1, m, m)``: causal, padding keys hidden.

    Every query may attend to itself, so all-padding prefixes stay finite.
    """
    items = _as_batch(items)
    m = items.shape[1]
    causal = np.tril(np.ones((m, m), dtype=bool))
    allowed = causal[None] & (items != 0)[:, None, :]
    allowed |= np.eye(m, dtype=bool)[None]
    return np.where(allowed, 0.0, NEG_INF)[:, None]


def multi_head_attention(x: Tensor, layer: dict, mask: np.ndarray, config: EncoderConfig) -> Tensor:
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, m, d = x.shape
    h, dh = config.heads, config.head_dim

    def split(t):
        return t.reshape(b, m, h, dh).transpose(0, 2, 1, 3)

    q, k, v = split(x @ layer["wq"]), split(x @ layer["wk"]), split(x @ layer["wv"])
    scale = math.sqrt(dh if config.scale == "head" else d)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / scale) + Tensor(mask)
    heads = softmax(scores, axis=-1) @ v
    out = heads.transpose(0, 2, 1, 3).reshape(b, m, d) @ layer["wo"]
    return out.reshape(m, d) if squeeze else out


def pffn(x: Tensor, layer: dict) -> Tensor:
    return (x @ layer["w1"] + layer["b1"]).relu() @ layer["w2"] + layer["b2"]


def encode(items, params: ModelParams, train: bool = False, rng=None) -> Tensor:
    """Final hidden states ``H^L`` of shape ``(batch, m, d)``."""
    cfg = params.config
    items = _as_batch(items)
    if train and cfg.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    mask = attention_mask(items)
    x = dropout(embed(items, params), cfg.dropout, rng, train)
    for l in range(cfg.layers):
        lp = params.layer(l)
        a = multi_head_attention(x, lp, mask, cfg)
        x = layer_norm(x + dropout(a, cfg.dropout, rng, train), lp["ln1_gain"], lp["ln1_bias"], cfg.ln_eps)
        f = pffn(x, lp)
        x = layer_norm(x + dropout(f, cfg.dropout, rng, train), lp["ln2_gain"], lp["ln2_bias"], cfg.ln_eps)
    return x


def gather_scores(hidden: Tensor, targets, params: ModelParams) -> Tensor:
    """Relevance of one chosen item per position: ``H_j . N_{targets[j]}``."""
    emb = params.item_table.take_rows(np.asarray(targets, dtype=np.int64))
    return (hidden * emb).sum(axis=-1)


def all_scores(hidden: Tensor, params: ModelParams) -> Tensor:
    """Relevance of every real item (padding excluded): ``(..., |V|)``.

    Column ``i`` corresponds to item index ``i + 1``.
    """
    return hidden @ params.item_table[1:].T


def relevance(h_j, params: ModelParams) -> np.ndarray:
    """Scores over items 1..|V| for a single hidden vector (index 0 = item 1)."""
    h = h_j.data if isinstance(h_j, Tensor) else np.asarray(h_j, dtype=float)
    return params.item_table.data[1:] @ h


def last_hidden(items, params: ModelParams) -> np.ndarray:
    """Eval-mode hidden state at the final column for each row, ``(batch, d)``."""
    return encode(items, params, train=False).data[:, -1, :]


# -- checkpoint archive ----------------------------------------------------------

def save_checkpoint(params: ModelParams, path=None, extra=None) -> bytes:
    """Serialise config and every tensor; returns the bytes (and writes ``path``)."""
    names = sorted(params.tensors)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "num_items": params.num_items,
        "extra": extra or {},
        "tensors": [{"name": k, "shape": list(params.tensors[k].shape)} for k in names],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(hb)))
    buf.write(hb)
    for k in names:
        buf.write(np.ascontiguousarray(params.tensors[k].data, dtype="<f8").tobytes())
    raw = buf.getvalue()
    if path is not None:
        from .io_utils import atomic_write_bytes
        atomic_write_bytes(path, raw)
    return raw


def load_checkpoint(source):
    """Inverse of :func:`save_checkpoint`; ``source`` is a path or bytes."""
    raw = source if isinstance(source, (bytes, bytearray)) else open(source, "rb").read()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise FormatError("not a checkpoint archive")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<I", raw[off:off + 4])
    off += 4
    header = json.loads(raw[off:off + hlen])
    off += hlen
    if header.get("version") != CHECKPOINT_VERSION:
        raise CompatibilityError(f"checkpoint version {header.get('version')} unsupported")
    config = EncoderConfig(**header["config"])
    tensors = {}
    for spec in header["tensors"]:
        size = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(spec["shape"]).astype(np.float64)
        off += 8 * size
        tensors[spec["name"]] = Parameter(arr, spec["name"])
    params = ModelParams(config, header["num_items"], tensors)
    return params, header.get("extra", {})
