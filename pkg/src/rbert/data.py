"""SemEval-2010 Task 8 files: parsing, the directional label space, prediction files."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

FAMILIES = (
    "Cause-Effect",
    "Component-Whole",
    "Content-Container",
    "Entity-Destination",
    "Entity-Origin",
    "Instrument-Agency",
    "Member-Collection",
    "Message-Topic",
    "Product-Producer",
)
OTHER = "Other"


class DataError(ValueError):
    """Raised for malformed dataset, label, or prediction input."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, block_id: int | str | None = None):
        self.line = line
        self.block_id = block_id
        where = []
        if line is not None:
            where.append(f"line {line}")
        if block_id is not None:
            where.append(f"block {block_id}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class Direction(enum.Enum):
    E1_E2 = "(e1,e2)"
    E2_E1 = "(e2,e1)"
    NONE = ""

    def flipped(self) -> "Direction":
        if self is Direction.E1_E2:
            return Direction.E2_E1
        if self is Direction.E2_E1:
            return Direction.E1_E2
        return self


@dataclass(frozen=True)
class DirectionalLabel:
    family: str
    direction: Direction = Direction.NONE

    def __post_init__(self):
        if self.family != OTHER and self.family not in FAMILIES:
            raise DataError(f"unknown relation family {self.family!r}")
        if (self.family == OTHER) != (self.direction is Direction.NONE):
            raise DataError(f"direction {self.direction} invalid for family {self.family!r}")

    def render(self) -> str:
        return self.family + self.direction.value

    def flipped(self) -> "DirectionalLabel":
        return DirectionalLabel(self.family, self.direction.flipped())

    @property
    def class_index(self) -> int:
        return LABEL_SPACE.index(self)

    def __str__(self) -> str:
        return self.render()


_LABEL_RE = re.compile(r"^([A-Za-z-]+)(\(e1,e2\)|\(e2,e1\))?$")


def parse_label(text: str) -> DirectionalLabel:
    """Parse a rendered label such as ``Cause-Effect(e2,e1)`` or ``Other``."""
    m = _LABEL_RE.match(text.strip())
    if m is None:
        raise DataError(f"unknown label {text!r}")
    family, suffix = m.group(1), m.group(2)
    if family == OTHER:
        if suffix is not None:
            raise DataError(f"unknown label {text!r}")
        return DirectionalLabel(OTHER, Direction.NONE)
    if family not in FAMILIES or suffix is None:
        raise DataError(f"unknown label {text!r}")
    return DirectionalLabel(family, Direction(suffix))


class LabelSpace(Sequence[DirectionalLabel]):
    """The 19 directional labels, indexed in lexicographic order of their rendered strings."""

    def __init__(self):
        labels = [DirectionalLabel(OTHER, Direction.NONE)]
        for fam in FAMILIES:
            labels.append(DirectionalLabel(fam, Direction.E1_E2))
            labels.append(DirectionalLabel(fam, Direction.E2_E1))
        self._labels = tuple(sorted(labels, key=DirectionalLabel.render))
        self._index = {lab.render(): i for i, lab in enumerate(self._labels)}

    def __len__(self) -> int:
        return len(self._labels)

    def __getitem__(self, i):
        return self._labels[i]

    def index(self, label: DirectionalLabel) -> int:  # type: ignore[override]
        return self._index[label.render()]

    def parse(self, text: str) -> DirectionalLabel:
        return parse_label(text)

    @cached_property
    def other_index(self) -> int:
        return self._index[OTHER]


LABEL_SPACE = LabelSpace()


def label_space() -> LabelSpace:
    return LABEL_SPACE


@dataclass(frozen=True)
class RelationInstance:
    id: int
    sentence: tuple[str, ...]
    e1_span: tuple[int, int]
    e2_span: tuple[int, int]
    label: DirectionalLabel | None
    comment: str | None = None

    def __post_init__(self):
        n = len(self.sentence)
        for name, (a, b) in (("e1", self.e1_span), ("e2", self.e2_span)):
            if not 0 <= a <= b < n:
                raise DataError(f"{name} span {(a, b)} outside sentence of {n} words (id {self.id})")
        (a1, b1), (a2, b2) = self.e1_span, self.e2_span
        if a1 <= b2 and a2 <= b1:
            raise DataError(f"entity spans overlap (id {self.id})")

    @property
    def e1_words(self) -> tuple[str, ...]:
        return self.sentence[self.e1_span[0] : self.e1_span[1] + 1]

    @property
    def e2_words(self) -> tuple[str, ...]:
        return self.sentence[self.e2_span[0] : self.e2_span[1] + 1]

    def tagged_sentence(self) -> str:
        """Rebuild the ``<e1>..</e1>``/``<e2>..</e2>`` tagged sentence, words space-joined."""
        out = []
        for i, w in enumerate(self.sentence):
            if i == self.e1_span[0]:
                w = "<e1>" + w
            if i == self.e2_span[0]:
                w = "<e2>" + w
            if i == self.e1_span[1]:
                w = w + "</e1>"
            if i == self.e2_span[1]:
                w = w + "</e2>"
            out.append(w)
        return " ".join(out)


_TAG_RE = re.compile(r"</?e[12]>")


def split_tagged(text: str) -> tuple[list[str], tuple[int, int], tuple[int, int]]:
    """Split a tagged sentence into words and inclusive entity word spans.

    Tags split words: text glued to a tag on the outside becomes its own token,
    so ``<e2>house</e2>.`` yields ``house`` and ``.``.
    """
    pieces = _TAG_RE.split(text)
    tags = _TAG_RE.findall(text)
    if sorted(tags) != ["</e1>", "</e2>", "<e1>", "<e2>"]:
        raise DataError(f"expected exactly one <e1>..</e1> and one <e2>..</e2>, found {tags}")
    words: list[str] = []
    spans: dict[str, tuple[int, int]] = {}
    open_tag = None
    start = 0
    for k, piece in enumerate(pieces):
        seg = piece.split()
        if open_tag is not None and not seg:
            raise DataError(f"empty entity <{open_tag}>")
        words.extend(seg)
        if k == len(tags):
            break
        tag = tags[k]
        name = tag.strip("</>")
        if tag.startswith("</"):
            if open_tag != name:
                raise DataError(f"unexpected closing tag {tag}")
            spans[name] = (start, len(words) - 1)
            open_tag = None
        else:
            if open_tag is not None:
                raise DataError(f"nested entity tag {tag} inside <{open_tag}>")
            open_tag = name
            start = len(words)
    if open_tag is not None:
        raise DataError(f"missing closing tag </{open_tag}>")
    return words, spans["e1"], spans["e2"]


def _blocks(lines: list[str]) -> Iterable[tuple[int, list[tuple[int, str]]]]:
    block: list[tuple[int, str]] = []
    for lineno, line in enumerate(lines, start=1):
        if line.strip():
            block.append((lineno, line))
        elif block:
            yield block[0][0], block
            block = []
    if block:
        yield block[0][0], block


def parse_dataset(content: str, format: str = "train") -> list[RelationInstance]:
    """Parse SemEval-2010 Task 8 TXT content into instances, in file order.

    ``format="test"`` accepts blocks without a label line (the unlabeled test
    file); their ``label`` is None.  ``format="train"`` requires labels.
    """
    if format not in ("train", "test"):
        raise ValueError(f"format must be 'train' or 'test', got {format!r}")
    lines = content.splitlines()
    seen: set[int] = set()
    out = []
    for _, block in _blocks(lines):
        lineno, head = block[0]
        m = re.match(r'^\s*(\d+)\t"(.*)"\s*$', head)
        if m is None:
            raise ParseError(f"malformed sentence line {head.strip()!r}", lineno)
        iid = int(m.group(1))
        if iid in seen:
            raise ParseError("duplicate id", lineno, iid)
        seen.add(iid)
        try:
            words, e1, e2 = split_tagged(m.group(2))
        except DataError as exc:
            raise ParseError(str(exc), lineno, iid) from None

        rest = block[1:]
        label = None
        comment = None
        if rest and not rest[0][1].startswith("Comment:"):
            lab_line, lab_text = rest.pop(0)
            try:
                label = parse_label(lab_text)
            except DataError as exc:
                raise ParseError(str(exc), lab_line, iid) from None
        elif format == "train":
            raise ParseError("missing label line", lineno + 1, iid)
        if rest:
            c_line, c_text = rest.pop(0)
            if not c_text.startswith("Comment:"):
                raise ParseError(f"unexpected line {c_text.strip()!r}", c_line, iid)
            comment = c_text[len("Comment:") :].strip()
        if rest:
            raise ParseError(f"unexpected line {rest[0][1].strip()!r}", rest[0][0], iid)
        try:
            out.append(RelationInstance(iid, tuple(words), e1, e2, label, comment))
        except DataError as exc:
            raise ParseError(str(exc), lineno, iid) from None
    return out


def render_dataset(instances: Iterable[RelationInstance]) -> str:
    """Inverse of :func:`parse_dataset` up to whitespace inside sentences."""
    chunks = []
    for inst in instances:
        chunk = f'{inst.id}\t"{inst.tagged_sentence()}"\n'
        if inst.label is not None:
            chunk += inst.label.render() + "\n"
        chunk += "Comment:" + (f" {inst.comment}" if inst.comment else "") + "\n\n"
        chunks.append(chunk)
    return "".join(chunks)


def write_predictions(pairs: Iterable[tuple[int, DirectionalLabel]]) -> str:
    pairs = list(pairs)
    ids = [i for i, _ in pairs]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DataError(f"duplicate id {dup} in predictions")
    return "".join(f"{i}\t{lab.render()}\n" for i, lab in sorted(pairs, key=lambda p: p[0]))


def parse_predictions(content: str) -> list[tuple[int, DirectionalLabel]]:
    out = []
    seen = set()
    for lineno, line in enumerate(content.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or not parts[0].isdigit():
            raise ParseError(f"expected '<id>\\t<label>', got {line.strip()!r}", lineno)
        iid = int(parts[0])
        if iid in seen:
            raise ParseError("duplicate id", lineno, iid)
        seen.add(iid)
        try:
            out.append((iid, parse_label(parts[1])))
        except DataError as exc:
            raise ParseError(str(exc), lineno, iid) from None
    return out
