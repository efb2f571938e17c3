"""R-BERT: transformer encoder + entity-aware classification head.

Head, with ``avg(i..j)`` the mean of encoder states over an entity's subwords::

    H'0 = W0 · tanh(H[0])      + b0
    H'1 = Went · tanh(avg(e1)) + bent
    H'2 = Went · tanh(avg(e2)) + bent     # same storage as the e1 projection
    p   = softmax(W3 · [H'0; H'1; H'2] + b3)

Dropout sits on the input of each of the three affine layers.  The ablation
variants drop the markers from the input (NO_SEP), the entity vectors from
the classifier (NO_ENT), or both.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import Parameter
from .tokenizer import Batch


class Variant(str, enum.Enum):
    FULL = "FULL"
    NO_SEP = "NO_SEP"
    NO_ENT = "NO_ENT"
    NO_SEP_NO_ENT = "NO_SEP_NO_ENT"

    @property
    def uses_markers(self) -> bool:
        return self in (Variant.FULL, Variant.NO_ENT)

    @property
    def uses_entities(self) -> bool:
        return self in (Variant.FULL, Variant.NO_SEP)

    @property
    def display_name(self) -> str:
        return "R-BERT" if self is Variant.FULL else "R-BERT-" + self.value.replace("_", "-")

    @classmethod
    def parse(cls, text: str) -> "Variant":
        key = text.strip().upper().replace("-", "_")
        if key.startswith("R_BERT_"):
            key = key[len("R_BERT_") :]
        elif key in ("R_BERT", "RBERT"):
            key = "FULL"
        return cls(key)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_size: int = 32
    num_labels: int = 19
    num_layers: int = 2
    num_heads: int = 4
    ff_size: int = 128
    max_len: int = 128
    dropout: float = 0.1
    variant: Variant = Variant.FULL
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("vocab_size", "hidden_size", "num_labels", "num_heads", "ff_size", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def classifier_width(self) -> int:
        return 3 * self.hidden_size if self.variant.uses_entities else self.hidden_size

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


class Encoder:
    """Token + position embeddings, LayerNorm, then a stack of post-LN transformer blocks."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c = config
        dt = np.dtype(c.dtype)
        self.config = c
        self.embed = {
            "token": Parameter(nn.glorot(rng, (c.vocab_size, c.hidden_size), dt), "embeddings.token"),
            "position": Parameter(nn.glorot(rng, (c.max_len, c.hidden_size), dt), "embeddings.position"),
            "ln_g": Parameter(np.ones(c.hidden_size, dt), "embeddings.ln_g"),
            "ln_b": Parameter(np.zeros(c.hidden_size, dt), "embeddings.ln_b"),
        }
        self.layers = [
            nn.init_block(rng, c.hidden_size, c.ff_size, dt, prefix=f"encoder.layer{i}.") for i in range(c.num_layers)
        ]

    @property
    def params(self) -> dict[str, Parameter]:
        out = {p.name: p for p in self.embed.values()}
        for layer in self.layers:
            out.update({p.name: p for p in layer.values()})
        return out

    def forward(self, input_ids: np.ndarray, mask: np.ndarray, train: bool = False, rng=None):
        B, n = input_ids.shape
        if n > self.config.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.config.max_len}")
        rate = self.config.dropout
        x = self.embed["token"].value[input_ids] + self.embed["position"].value[:n]
        x, c_ln = nn.layer_norm_forward(x, self.embed["ln_g"], self.embed["ln_b"])
        x, m = nn.dropout(x, rate, train, rng)
        caches = []
        for layer in self.layers:
            x, c = nn.encoder_block_forward(x, mask, layer, self.config.num_heads, rate, train, rng)
            caches.append(c)
        return x, (input_ids, c_ln, m, caches)

    def backward(self, dH: np.ndarray, cache) -> None:
        input_ids, c_ln, m, caches = cache
        for layer_cache in reversed(caches):
            dH = nn.encoder_block_backward(dH, layer_cache)
        dx = nn.dropout_backward(dH, m)
        dx = nn.layer_norm_backward(dx, c_ln)
        n = input_ids.shape[1]
        np.add.at(self.embed["token"].grad, input_ids, dx)
        self.embed["position"].grad[:n] += dx.sum(axis=0)


@dataclass
class HeadParams:
    W0: Parameter
    b0: Parameter
    W3: Parameter
    b3: Parameter
    Went: Parameter | None = None
    bent: Parameter | None = None

    # the two entity projections are one storage
    @property
    def W1(self) -> Parameter | None:
        return self.Went

    @property
    def W2(self) -> Parameter | None:
        return self.Went

    @property
    def b1(self) -> Parameter | None:
        return self.bent

    @property
    def b2(self) -> Parameter | None:
        return self.bent

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "HeadParams":
        d, L = config.hidden_size, config.num_labels
        dt = np.dtype(config.dtype)
        head = cls(
            W0=Parameter(nn.glorot(rng, (d, d), dt), "head.W0"),
            b0=Parameter(np.zeros(d, dt), "head.b0"),
            W3=Parameter(nn.glorot(rng, (L, config.classifier_width), dt), "head.W3"),
            b3=Parameter(np.zeros(L, dt), "head.b3"),
        )
        if config.variant.uses_entities:
            head.Went = Parameter(nn.glorot(rng, (d, d), dt), "head.Went")
            head.bent = Parameter(np.zeros(d, dt), "head.bent")
        return head

    @property
    def params(self) -> dict[str, Parameter]:
        ps = [self.W0, self.b0, self.Went, self.bent, self.W3, self.b3]
        return {p.name: p for p in ps if p is not None}


# -- head operations ----------------------------------------------------------


def entity_average(H: np.ndarray, span: tuple[int, int]) -> np.ndarray:
    """Mean of rows ``start..end`` (inclusive) of an (n, d) state matrix."""
    start, end = span
    if not 0 <= start <= end < H.shape[0]:
        raise ValueError(f"range {span} outside {H.shape[0]} positions")
    return H[start : end + 1].sum(axis=0) / (end - start + 1)


def pooling_matrix(ranges: np.ndarray, n: int, dtype) -> np.ndarray:
    """(B, n) weights so that ``P[b] @ H[b]`` is the span average for row b."""
    pos = np.arange(n)
    start, end = ranges[:, :1], ranges[:, 1:]
    if np.any(start < 0) or np.any(end >= n) or np.any(start > end):
        raise ValueError(f"entity range outside sequence of length {n}")
    inside = (pos >= start) & (pos <= end)
    return inside.astype(dtype) / (end - start + 1).astype(dtype)


def _project(x, W, b, rate, train, rng):
    t, c_t = nn.tanh_forward(x)
    t, m = nn.dropout(t, rate, train, rng)
    out, c_lin = nn.linear_forward(t, W, b)
    return out, (c_t, m, c_lin)


def _project_backward(dout, cache):
    c_t, m, c_lin = cache
    return nn.tanh_backward(nn.dropout_backward(nn.linear_backward(dout, c_lin), m), c_t)


def entity_project(avg, head: HeadParams, rate: float = 0.0, train: bool = False, rng=None):
    """``Went · dropout(tanh(avg)) + bent``; returns (out, cache)."""
    if head.Went is None:
        raise ValueError("this head has no entity projection")
    return _project(avg, head.Went, head.bent, rate, train, rng)


def cls_project(h0, head: HeadParams, rate: float = 0.0, train: bool = False, rng=None):
    """``W0 · dropout(tanh(h0)) + b0``; returns (out, cache)."""
    return _project(h0, head.W0, head.b0, rate, train, rng)


def classify(h0, h1, h2, head: HeadParams, rate: float = 0.0, train: bool = False, rng=None):
    """Softmax over ``W3 · dropout([h0; h1; h2]) + b3``.

    ``h1``/``h2`` may be None for the entity-free variants.  Returns
    (probabilities, logits, cache).
    """
    feats = h0 if h1 is None else np.concatenate([h0, h1, h2], axis=-1)
    feats, m = nn.dropout(feats, rate, train, rng)
    logits, c_lin = nn.linear_forward(feats, head.W3, head.b3)
    return nn.softmax(logits), logits, (m, c_lin, h1 is not None)


def classify_backward(dlogits, cache):
    m, c_lin, has_ent = cache
    dfeat = nn.dropout_backward(nn.linear_backward(dlogits, c_lin), m)
    if not has_ent:
        return dfeat, None, None
    return tuple(np.split(dfeat, 3, axis=-1))


# -- full model ------------------------------------------------------------------


class RBertModel:
    def __init__(self, config: ModelConfig, seed: int | np.random.Generator = 0, encoder=None):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.config = config
        self.encoder = encoder if encoder is not None else Encoder(config, rng)
        self.head = HeadParams.init(config, rng)

    @property
    def params(self) -> dict[str, Parameter]:
        out = dict(self.encoder.params)
        out.update(self.head.params)
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, batch: Batch, train: bool = False, rng: np.random.Generator | None = None):
        """Returns (probabilities (B, L), cache)."""
        variant = self.config.variant
        if batch.markers != variant.uses_markers:
            kind = "marked" if batch.markers else "marker-free"
            raise ValueError(f"{variant.value} expects {'marked' if variant.uses_markers else 'marker-free'} input, got {kind}")
        rate = self.config.dropout
        H, c_enc = self.encoder.forward(batch.input_ids, batch.attention_mask, train, rng)
        h0, c0 = cls_project(H[:, 0, :], self.head, rate, train, rng)
        ent = None
        h1 = h2 = None
        if variant.uses_entities:
            n = H.shape[1]
            P1 = pooling_matrix(batch.e1_ranges, n, H.dtype)
            P2 = pooling_matrix(batch.e2_ranges, n, H.dtype)
            a1 = np.einsum("bn,bnd->bd", P1, H)
            a2 = np.einsum("bn,bnd->bd", P2, H)
            h1, c1 = entity_project(a1, self.head, rate, train, rng)
            h2, c2 = entity_project(a2, self.head, rate, train, rng)
            ent = (P1, P2, c1, c2)
        probs, logits, c_cls = classify(h0, h1, h2, self.head, rate, train, rng)
        return probs, {"logits": logits, "H": H, "enc": c_enc, "c0": c0, "ent": ent, "cls": c_cls}

    def backward(self, dlogits: np.ndarray, cache) -> None:
        dh0, dh1, dh2 = classify_backward(dlogits, cache["cls"])
        dH = np.zeros_like(cache["H"])
        dH[:, 0, :] += _project_backward(dh0, cache["c0"])
        if cache["ent"] is not None:
            P1, P2, c1, c2 = cache["ent"]
            da1 = _project_backward(dh1, c1)
            da2 = _project_backward(dh2, c2)
            dH += P1[:, :, None] * da1[:, None, :] + P2[:, :, None] * da2[:, None, :]
        self.encoder.backward(dH, cache["enc"])

    def loss_and_backward(self, batch: Batch, train: bool = False, rng=None) -> tuple[float, np.ndarray]:
        """Cross-entropy on the batch; gradients are accumulated into the parameters."""
        probs, cache = self.forward(batch, train, rng)
        loss, dlogits = nn.softmax_cross_entropy(cache["logits"], batch.labels)
        self.backward(dlogits, cache)
        return loss, probs

    def predict_proba(self, batch: Batch) -> np.ndarray:
        return self.forward(batch, train=False)[0]

    def predict(self, batch: Batch) -> np.ndarray:
        """Row-wise argmax; ties go to the lowest class index."""
        return np.argmax(self.predict_proba(batch), axis=1)

    # -- persistence --

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.params.items()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.params
        if set(tensors) != set(params):
            missing = sorted(set(params) - set(tensors))
            extra = sorted(set(tensors) - set(params))
            raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            if tensors[name].shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: {tensors[name].shape} vs {p.value.shape}")
            p.value[...] = tensors[name]

    def save(self, path: str | Path, meta: dict[str, Any] | None = None) -> None:
        save_checkpoint(path, self.state_dict(), {"model": self.config.to_dict(), **(meta or {})})

    @classmethod
    def load(cls, path: str | Path) -> tuple["RBertModel", dict[str, Any]]:
        tensors, meta = load_checkpoint(path)
        config = ModelConfig(**meta["model"])
        model = cls(config, seed=0)
        model.load_state_dict(tensors)
        return model, meta
