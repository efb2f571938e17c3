"""Desk-scale relation task where only the entity markers reveal the label.

Family ``f`` owns two candidate tokens ``cand{f}a``/``cand{f}b``.  Every
sentence contains all candidate tokens in random order plus random filler
words; the markers pick which occurrences are e1 and e2:

* e1 = ``cand{f}a``, e2 = ``cand{f}b``  ->  ``f(e1,e2)``
* e1 = ``cand{f}b``, e2 = ``cand{f}a``  ->  ``f(e2,e1)``
* any other pair                         ->  ``Other``

The unmarked word sequence is a uniform shuffle that does not depend on the
label, so a model that cannot see the entity positions is at chance.
"""

from __future__ import annotations

import numpy as np

from .data import FAMILIES, OTHER, Direction, DirectionalLabel, RelationInstance


def candidate_tokens(num_families: int) -> list[str]:
    return [f"cand{f}{s}" for f in range(num_families) for s in "ab"]


def synthetic_classes(num_families: int) -> list[DirectionalLabel]:
    out = []
    for fam in FAMILIES[:num_families]:
        out.append(DirectionalLabel(fam, Direction.E1_E2))
        out.append(DirectionalLabel(fam, Direction.E2_E1))
    out.append(DirectionalLabel(OTHER, Direction.NONE))
    return out


def make_synthetic_task(
    num_families: int = 6,
    vocab_size: int = 24,
    train_size: int = 600,
    test_size: int = 200,
    seed: int = 0,
    min_fillers: int = 2,
    max_fillers: int = 6,
) -> tuple[list[RelationInstance], list[RelationInstance]]:
    """Generate (train, test).  Classes are assigned round-robin, so each split is
    balanced to within one example per class; ids run 1..train_size+test_size."""
    if not 2 <= num_families <= len(FAMILIES):
        raise ValueError(f"num_families must be in [2, {len(FAMILIES)}]")
    if vocab_size < 1:
        raise ValueError("vocab_size must be positive")
    rng = np.random.default_rng(seed)
    cands = candidate_tokens(num_families)
    fillers = [f"w{i}" for i in range(vocab_size)]
    classes = synthetic_classes(num_families)
    fam_pairs = {(2 * f, 2 * f + 1) for f in range(num_families)} | {(2 * f + 1, 2 * f) for f in range(num_families)}
    other_pairs = [
        (i, j) for i in range(len(cands)) for j in range(len(cands)) if i != j and (i, j) not in fam_pairs
    ]

    def instance(iid: int, label: DirectionalLabel) -> RelationInstance:
        if label.family == OTHER:
            t1, t2 = other_pairs[rng.integers(len(other_pairs))]
        else:
            f = FAMILIES.index(label.family)
            t1, t2 = (2 * f, 2 * f + 1) if label.direction is Direction.E1_E2 else (2 * f + 1, 2 * f)
        words = [cands[i] for i in rng.permutation(len(cands))]
        for _ in range(rng.integers(min_fillers, max_fillers + 1)):
            words.insert(int(rng.integers(len(words) + 1)), fillers[rng.integers(vocab_size)])
        p1, p2 = words.index(cands[t1]), words.index(cands[t2])
        return RelationInstance(iid, tuple(words), (p1, p1), (p2, p2), label)

    def split(first_id: int, size: int) -> list[RelationInstance]:
        labels = [classes[k % len(classes)] for k in range(size)]
        order = rng.permutation(size)
        return [instance(first_id + k, labels[order[k]]) for k in range(size)]

    train = split(1, train_size)
    test = split(1 + train_size, test_size)
    return train, test


def majority_baseline(train: list[RelationInstance], test: list[RelationInstance]) -> list[tuple[int, DirectionalLabel]]:
    """Predict the most frequent training label (ties: lowest rendered label) for every test instance."""
    counts: dict[DirectionalLabel, int] = {}
    for inst in train:
        counts[inst.label] = counts.get(inst.label, 0) + 1
    best = min(counts, key=lambda lab: (-counts[lab], lab.render()))
    return [(inst.id, best) for inst in test]
