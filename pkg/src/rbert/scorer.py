"""Directional macro-F1 over the nine relation families, Other excluded.

Per family r:

* ``exact_correct`` - family and direction both right
* ``predicted``     - predicted as r in either direction
* ``actual``        - gold r in either direction

so a wrong-direction prediction costs both precision and recall.  The macro
average runs over families that occur in gold or predictions.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

from .data import FAMILIES, OTHER, DataError, DirectionalLabel, parse_predictions

Pairs = Sequence[tuple[int, DirectionalLabel]]


class ScoreError(DataError):
    pass


@dataclass
class ConfusionStats:
    exact_correct: Counter = field(default_factory=Counter)
    predicted: Counter = field(default_factory=Counter)
    actual: Counter = field(default_factory=Counter)

    def __add__(self, other: "ConfusionStats") -> "ConfusionStats":
        return ConfusionStats(
            self.exact_correct + other.exact_correct,
            self.predicted + other.predicted,
            self.actual + other.actual,
        )

    @property
    def total(self) -> int:
        return sum(self.actual.values())


@dataclass(frozen=True)
class FamilyScore:
    family: str
    exact_correct: int
    predicted: int
    actual: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ScoreReport:
    macro_f1: float  # percent, unrounded
    families: tuple[FamilyScore, ...]
    stats: ConfusionStats

    @property
    def per_family(self) -> list[tuple[str, float, float, float]]:
        return [(f.family, f.precision, f.recall, f.f1) for f in self.families]

    @property
    def averaged(self) -> list[FamilyScore]:
        return [f for f in self.families if f.actual > 0 or f.predicted > 0]

    def render(self) -> str:
        rows = [f"{'Family':<20}{'P':>8}{'R':>8}{'F1':>8}{'exact':>8}{'pred':>8}{'gold':>8}"]
        for f in self.families:
            rows.append(
                f"{f.family:<20}{fmt2(f.precision):>8}{fmt2(f.recall):>8}{fmt2(f.f1):>8}"
                f"{f.exact_correct:>8}{f.predicted:>8}{f.actual:>8}"
            )
        rows.append(
            f"Other: {self.stats.predicted[OTHER]} predicted, {self.stats.actual[OTHER]} gold, "
            f"{self.stats.exact_correct[OTHER]} agreeing (not scored)"
        )
        rows.append(
            f"Averaged over {len(self.averaged)} of {len(FAMILIES)} families; "
            "families absent from both gold and predictions are excluded."
        )
        rows.append(f"Macro-averaged F1 (directional, excluding Other): {fmt2(self.macro_f1)}")
        return "\n".join(rows) + "\n"


def fmt2(x: float) -> str:
    """Two decimals, halves rounded away from zero."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _aligned(gold: Pairs, pred: Pairs) -> list[tuple[DirectionalLabel, DirectionalLabel]]:
    g = dict(gold)
    p = dict(pred)
    if len(g) != len(gold) or len(p) != len(pred):
        raise ScoreError("duplicate ids in gold or predictions")
    missing = sorted(set(g) - set(p))
    if missing:
        raise ScoreError(f"prediction missing for id {missing[0]} ({len(missing)} missing)")
    extra = sorted(set(p) - set(g))
    if extra:
        raise ScoreError(f"prediction for unknown id {extra[0]} ({len(extra)} unknown)")
    return [(g[i], p[i]) for i in sorted(g)]


def confusion_stats(gold: Pairs, pred: Pairs) -> ConfusionStats:
    stats = ConfusionStats()
    for gl, pl in _aligned(gold, pred):
        stats.actual[gl.family] += 1
        stats.predicted[pl.family] += 1
        if gl == pl:
            stats.exact_correct[gl.family] += 1
    return stats


def _prf(exact: float, predicted: float, actual: float) -> tuple[float, float, float]:
    p = exact / predicted if predicted else 0.0
    r = exact / actual if actual else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def score_stats(stats: ConfusionStats) -> ScoreReport:
    fams = []
    for fam in FAMILIES:
        p, r, f = _prf(stats.exact_correct[fam], stats.predicted[fam], stats.actual[fam])
        fams.append(FamilyScore(fam, stats.exact_correct[fam], stats.predicted[fam], stats.actual[fam], 100 * p, 100 * r, 100 * f))
    used = [f.f1 for f in fams if f.actual > 0 or f.predicted > 0]
    macro = sum(used) / len(used) if used else 0.0
    return ScoreReport(macro, tuple(fams), stats)


def score(gold: Pairs, pred: Pairs) -> ScoreReport:
    if not gold:
        raise ScoreError("nothing to score: gold is empty")
    return score_stats(confusion_stats(gold, pred))


def score_files(gold_path: str | Path, pred_path: str | Path) -> str:
    gold = parse_predictions(Path(gold_path).read_text(encoding="utf-8"))
    pred = parse_predictions(Path(pred_path).read_text(encoding="utf-8"))
    if not gold or not pred:
        raise ScoreError(f"empty {'gold' if not gold else 'prediction'} file")
    return score(gold, pred).render()


def chance_macro_f1(gold: Sequence[DirectionalLabel], pred: Sequence[DirectionalLabel]) -> float:
    """Macro-F1 expected if predictions were independent of the gold labels.

    Keeps both label marginals and replaces each exact-match count by its
    expectation under independence, ``n_gold(c) * n_pred(c) / N``.
    """
    if len(gold) != len(pred) or not gold:
        raise ScoreError("chance level needs equal, non-empty label lists")
    n = len(gold)
    g = Counter(gold)
    p = Counter(pred)
    f1s = []
    for fam in FAMILIES:
        labels = [lab for lab in set(g) | set(p) if lab.family == fam]
        exact = sum(g[lab] * p[lab] for lab in labels) / n
        predicted = sum(p[lab] for lab in labels)
        actual = sum(g[lab] for lab in labels)
        if predicted or actual:
            f1s.append(100 * _prf(exact, predicted, actual)[2])
    return sum(f1s) / len(f1s) if f1s else 0.0
