"""Entity-aware relation classification (R-BERT) on a from-scratch numpy transformer."""

from .data import (
    FAMILIES,
    LABEL_SPACE,
    Direction,
    DirectionalLabel,
    ParseError,
    RelationInstance,
    label_space,
    parse_dataset,
    parse_label,
    parse_predictions,
    write_predictions,
)
from .model import ModelConfig, RBertModel, Variant
from .scorer import score, score_files
from .tokenizer import Vocab, encode, pad_batch, wordpiece
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"
