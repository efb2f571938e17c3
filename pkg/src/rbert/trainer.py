"""Mini-batch training and evaluation."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import LABEL_SPACE, DirectionalLabel
from .model import ModelConfig, RBertModel, Variant
from .nn import AdamConfig, adam_step
from .tokenizer import EncodedExample, pad_batch

log = logging.getLogger(__name__)

PROFILES: dict[str, dict] = {
    # batch 16, length 128, lr 2e-5, 5 epochs, dropout 0.1; BERT-base encoder shape
    "finetune": dict(
        batch_size=16, max_len=128, learning_rate=2e-5, epochs=5, dropout=0.1,
        hidden_size=768, num_layers=12, num_heads=12, ff_size=3072,
    ),
    # random initialisation needs a far larger step size than fine-tuning
    "scratch": dict(
        batch_size=16, max_len=128, learning_rate=1e-3, epochs=200, dropout=0.1,
        hidden_size=32, num_layers=2, num_heads=4, ff_size=128,
    ),
}


class NumericError(ArithmeticError):
    """Loss or gradients became NaN/Inf."""


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    profile: str = "finetune"
    batch_size: int = 16
    max_len: int = 128
    learning_rate: float = 2e-5
    epochs: int = 5
    dropout: float = 0.1
    seed: int = 0
    variant: Variant = Variant.FULL
    hidden_size: int = 768
    num_layers: int = 12
    num_heads: int = 12
    ff_size: int = 3072
    num_labels: int = len(LABEL_SPACE)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dtype: str = "float32"
    eval_batch_size: int = 64
    # data
    train_file: str = ""
    test_file: str = ""
    vocab_file: str = ""
    min_count: int = 1
    # synthetic task
    synth_families: int = 6
    synth_vocab_size: int = 24
    synth_train_size: int = 600
    synth_test_size: int = 200

    def __post_init__(self):
        self.variant = Variant.parse(self.variant) if isinstance(self.variant, str) else Variant(self.variant)
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        for name in ("batch_size", "max_len", "learning_rate", "hidden_size", "num_heads", "ff_size", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @classmethod
    def for_profile(cls, profile: str = "finetune", **overrides) -> "TrainConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        return cls(profile=profile, **{**PROFILES[profile], **overrides})

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Flat ``key = value`` lines; ``#`` starts a comment.  A ``profile`` key
        selects the base defaults, other keys override them, then ``overrides``."""
        types = {f.name: f.type for f in fields(cls)}
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            raw[key] = value
        values = {k: _coerce(types[k], v, k) for k, v in raw.items()}
        values.update({k: v for k, v in overrides.items() if v is not None})
        profile = values.pop("profile", "finetune")
        return cls.for_profile(profile, **values)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "TrainConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), **overrides)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {v.value if isinstance(v, Variant) else v}")
        return "\n".join(lines) + "\n"

    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.epsilon)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            hidden_size=self.hidden_size,
            num_labels=self.num_labels,
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            ff_size=self.ff_size,
            max_len=self.max_len,
            dropout=self.dropout,
            variant=self.variant,
            dtype=self.dtype,
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _coerce(typ, value: str, key: str):
    typ = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ == "Variant":
            return Variant.parse(value)
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None
    return value


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.loss:.6f}\t{self.accuracy:.6f}"


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(shuffle), np.random.default_rng(drop)


def init_model(config: TrainConfig, vocab_size: int) -> RBertModel:
    init_rng, _, _ = _rngs(config.seed)
    return RBertModel(config.model_config(vocab_size), seed=init_rng)


def train(
    dataset: Sequence[EncodedExample],
    config: TrainConfig,
    vocab_size: int,
    on_step: Callable[[int, RBertModel], None] | None = None,
) -> tuple[RBertModel, list[EpochMetrics]]:
    """Train an R-BERT model from scratch on encoded examples.

    Each epoch reshuffles with the seeded RNG and keeps the final partial
    batch.  Metrics are the epoch's mean training loss and the accuracy of the
    train-mode predictions made along the way.
    """
    if not dataset:
        raise ValueError("training set is empty")
    labels = np.array([ex.label_index for ex in dataset])
    bad = np.flatnonzero((labels < 0) | (labels >= config.num_labels))
    if bad.size:
        ex = dataset[int(bad[0])]
        raise ValueError(f"example {ex.id}: label index {ex.label_index} outside [0, {config.num_labels})")
    if any(ex.markers != config.variant.uses_markers for ex in dataset):
        raise ValueError(f"variant {config.variant.value} needs {'marked' if config.variant.uses_markers else 'marker-free'} encodings")

    init_rng, shuffle_rng, drop_rng = _rngs(config.seed)
    model = RBertModel(config.model_config(vocab_size), seed=init_rng)
    params = model.parameters()
    adam = config.adam()
    n = len(dataset)
    step = 0
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            batch = pad_batch([dataset[i] for i in order[start : start + config.batch_size]])
            loss, probs = model.loss_and_backward(batch, train=True, rng=drop_rng)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss {loss} at epoch {epoch}, step {step + 1}")
            step += 1
            adam_step(params, adam, step)
            total_loss += loss * len(batch)
            correct += int(np.sum(np.argmax(probs, axis=1) == batch.labels))
            if on_step is not None:
                on_step(step, model)
        metrics = EpochMetrics(epoch, total_loss / n, correct / n)
        if not all(np.isfinite(p.value).all() for p in params):
            raise NumericError(f"non-finite parameters after epoch {epoch}")
        history.append(metrics)
        log.info("epoch %d loss %.4f acc %.4f", epoch, metrics.loss, metrics.accuracy)
    return model, history


def predict_indices(dataset: Sequence[EncodedExample], model: RBertModel, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(dataset), batch_size):
        out.append(model.predict(pad_batch(dataset[start : start + batch_size])))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(
    dataset: Sequence[EncodedExample], model: RBertModel, batch_size: int = 64
) -> tuple[list[tuple[int, DirectionalLabel]], float]:
    """Eval-mode predictions as (id, label) pairs plus exact-label accuracy over labelled examples."""
    if model.config.num_labels != len(LABEL_SPACE):
        raise ValueError(f"evaluate needs a {len(LABEL_SPACE)}-way model, got {model.config.num_labels}")
    pred = predict_indices(dataset, model, batch_size)
    gold = np.array([ex.label_index for ex in dataset], dtype=np.int64)
    labelled = gold >= 0
    accuracy = float(np.mean(pred[labelled] == gold[labelled])) if labelled.any() else float("nan")
    return [(ex.id, LABEL_SPACE[int(p)]) for ex, p in zip(dataset, pred)], accuracy


def metrics_log(config: TrainConfig, history: Sequence[EpochMetrics]) -> str:
    """Metrics file: ``#``-prefixed effective config, then ``epoch\\tloss\\taccuracy`` rows."""
    header = "".join(f"# {line}\n" for line in config.to_text().splitlines())
    return header + "epoch\tloss\taccuracy\n" + "".join(m.line() + "\n" for m in history)
