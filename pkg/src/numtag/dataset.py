"""Vocabulary and training-instance construction.

One instance per annotated numeral. In each instance the target numeral is
spelled out one character per token (``"-"`` -> ``[neg]``, ``"."`` -> ``[dot]``)
and every other numeral becomes ``[num]``. Labels are 0 (none), 1 (unit) and
2 (metric). The sequence is then cut to the effective range plus a margin on
each side and right-padded to a fixed length.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotation import AnnotatedDoc
from .preprocess import NUMERAL_RE, is_numeral

PAD, OOV, NUM, NEG, DOT = "[pad]", "[oov]", "[num]", "[neg]", "[dot]"
RESERVED = [PAD, OOV, NUM, *"0123456789", NEG, DOT]

NONE, UNIT, METRIC = 0, 1, 2

DEFAULT_MARGIN = 5
DEFAULT_MAX_LEN = 50


class EmptyCorpus(ValueError):
    pass


class NotANumeral(ValueError):
    pass


class OversizeInstance(ValueError):
    pass


class TooFewInstances(ValueError):
    pass


class Vocabulary:
    """Token/index map. Reserved tokens take indices 0-14; corpus tokens follow
    by descending frequency, ties broken lexicographically."""

    def __init__(self, tokens: list[str]):
        if tokens[: len(RESERVED)] != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.index_to_token = list(tokens)
        self.token_to_index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.index_to_token == other.index_to_token

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, 1)

    def token(self, index: int) -> str:
        return self.index_to_token[index]

    def content_hash(self) -> str:
        return hashlib.sha256("\n".join(self.index_to_token).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.index_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").split("\n")[:-1])


def build_vocab(docs: list[AnnotatedDoc]) -> Vocabulary:
    """Rank every non-numeral word by term frequency across ``docs``."""
    if not docs:
        raise EmptyCorpus("no documents to build a vocabulary from")
    counts: Counter[str] = Counter()
    for doc in docs:
        counts.update(w for w in doc.words if not is_numeral(w))
    reserved = set(RESERVED)
    ranked = sorted((t for t in counts if t not in reserved), key=lambda t: (-counts[t], t))
    return Vocabulary(RESERVED + ranked)


def expand_numeral(value_text: str) -> list[str]:
    """``"67.6"`` -> ``["6", "7", "[dot]", "6"]``."""
    if not NUMERAL_RE.match(value_text):
        raise NotANumeral(value_text)
    return [NEG if c == "-" else DOT if c == "." else c for c in value_text.lstrip("+")]


def encode(tokens: list[str], vocab: Vocabulary) -> list[int]:
    return [vocab.index(t) for t in tokens]


@dataclass
class TrainingInstance:
    tokens: list[str]
    labels: list[int]
    meta: dict
    indices: list[int] | None = None

    def to_json(self) -> str:
        return json.dumps(
            {"tokens": self.tokens, "indices": self.indices, "labels": self.labels, "meta": self.meta},
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "TrainingInstance":
        rec = json.loads(line)
        meta = rec["meta"]
        for key in ("effective_range", "window", "target_span"):
            if key in meta:
                meta[key] = list(meta[key])
        return cls(rec["tokens"], rec["labels"], meta, rec.get("indices"))


@dataclass
class DatasetSplit:
    train: list[TrainingInstance]
    test: list[TrainingInstance]
    seed: int


def mask_and_expand(words: list[str], target_pos: int) -> tuple[list[str], tuple[int, int]]:
    """Mask every numeral except ``words[target_pos]``, which is spelled out.

    Returns the new token list and the inclusive span of the target's
    character tokens.
    """
    out: list[str] = []
    span = (-1, -1)
    for i, w in enumerate(words):
        if i == target_pos:
            chars = expand_numeral(w)
            span = (len(out), len(out) + len(chars) - 1)
            out.extend(chars)
        elif is_numeral(w):
            out.append(NUM)
        else:
            out.append(w)
    return out, span


def word_to_expanded(word_pos: int, target_pos: int, n_chars: int) -> int:
    """Map an original word index to its (first) expanded index."""
    return word_pos if word_pos <= target_pos else word_pos + n_chars - 1


def expanded_to_word(pos: int, target_span: tuple[int, int]) -> int:
    """Inverse of :func:`word_to_expanded` (character tokens map to the target word)."""
    start, end = target_span
    if pos < start:
        return pos
    if pos <= end:
        return start
    return pos - (end - start)


@dataclass
class RawInstance:
    """A masked, expanded, labeled sentence before truncation."""

    tokens: list[str]
    labels: list[int]
    meta: dict = field(default_factory=dict)


def make_instances(doc: AnnotatedDoc) -> list[RawInstance]:
    """One labeled instance per Num entity of an aligned, validated doc."""
    words = doc.words
    out = []
    for num in doc.numerals():
        tokens, span = mask_and_expand(words, num.word_start)
        n_chars = span[1] - span[0] + 1
        labels = [NONE] * len(tokens)
        for kind, value in (("has_unit", UNIT), ("has_metric", METRIC)):
            for ent in doc.related(num.id, kind):
                lo = word_to_expanded(ent.word_start, num.word_start, n_chars)
                hi = word_to_expanded(ent.word_end, num.word_start, n_chars)
                for i in range(lo, hi + 1):
                    labels[i] = value
        for i in range(span[0], span[1] + 1):
            labels[i] = NONE
        meta = {
            "doc_id": doc.doc_id,
            "entity_id": num.id,
            "target_numeral_value": words[num.word_start],
            "target_word_pos": num.word_start,
            "target_span": list(span),
        }
        out.append(RawInstance(tokens, labels, meta))
    return out


def effective_range(tokens: list[str], labels: list[int], target_span: tuple[int, int]) -> tuple[int, int]:
    """Smallest interval holding the target and every unit/metric position."""
    positions = [i for i, lab in enumerate(labels) if lab != NONE]
    return min([target_span[0], *positions]), max([target_span[1], *positions])


def truncate_and_pad(
    raw: RawInstance,
    rng: tuple[int, int] | None = None,
    margin: int = DEFAULT_MARGIN,
    max_len: int = DEFAULT_MAX_LEN,
) -> TrainingInstance:
    """Keep ``margin`` words either side of the effective range, then pad.

    If the window is too long the margin shrinks; a range that alone exceeds
    ``max_len`` raises :class:`OversizeInstance`.
    """
    span = tuple(raw.meta["target_span"])
    if rng is None:
        rng = effective_range(raw.tokens, raw.labels, span)
    start, end = rng
    if end - start + 1 > max_len:
        raise OversizeInstance(f"{raw.meta.get('doc_id')}: effective range {rng} longer than {max_len}")
    n = len(raw.tokens)
    for m in range(margin, -1, -1):
        w0, w1 = max(0, start - m), min(n - 1, end + m)
        if w1 - w0 + 1 <= max_len:
            break
    tokens = raw.tokens[w0:w1 + 1]
    labels = raw.labels[w0:w1 + 1]
    pad = max_len - len(tokens)
    meta = dict(raw.meta, effective_range=[start, end], window=[w0, w1], margin=m)
    return TrainingInstance(tokens + [PAD] * pad, labels + [NONE] * pad, meta)


def build_instances(
    docs: list[AnnotatedDoc], margin: int = DEFAULT_MARGIN, max_len: int = DEFAULT_MAX_LEN
) -> list[TrainingInstance]:
    return [truncate_and_pad(raw, margin=margin, max_len=max_len) for doc in docs for raw in make_instances(doc)]


def encode_instances(instances: list[TrainingInstance], vocab: Vocabulary) -> list[TrainingInstance]:
    for inst in instances:
        inst.indices = encode(inst.tokens, vocab)
    return instances


def split_dataset(instances: list, ratio: float = 0.9, seed: int = 0) -> DatasetSplit:
    """Shuffle under ``seed`` and put ``floor(ratio * n)`` instances in train."""
    n = len(instances)
    if n < 2:
        raise TooFewInstances(f"need at least 2 instances, got {n}")
    n_train = math.floor(ratio * n + 1e-9)
    order = np.random.default_rng(seed).permutation(n)
    train = [instances[i] for i in order[:n_train]]
    test = [instances[i] for i in order[n_train:]]
    return DatasetSplit(train, test, seed)


def save_instances(instances: list[TrainingInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")


def load_instances(path: str | Path) -> list[TrainingInstance]:
    with Path(path).open(encoding="utf-8") as fh:
        return [TrainingInstance.from_json(line) for line in fh if line.strip()]


def as_arrays(instances: list[TrainingInstance]) -> tuple[np.ndarray, np.ndarray]:
    """Stack encoded instances into ``(n, seq_len)`` index and label arrays."""
    if any(inst.indices is None for inst in instances):
        raise ValueError("instances must be encoded first")
    x = np.array([inst.indices for inst in instances], dtype=np.int64)
    y = np.array([inst.labels for inst in instances], dtype=np.int64)
    return x, y

