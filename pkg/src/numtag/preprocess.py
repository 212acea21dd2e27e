"""Sentence splitting, word segmentation and numeral normalization.

Token shapes follow what annotated abstracts look like after segmentation::

    "the mean age was 67.6 +/- 11.2 years (range, 18-95)."
    -> the mean age was 67.6 +/- 11.2 years ( range , 18 - 95 ) .

Brackets and ``, ; : ? !`` are always split off. ``/`` and ``-`` are split off
unless ``-`` is the sign of a numeral. ``+/-`` stays one token and a ``.``
between digits stays inside its numeral.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path


class UnparseableNumeral(ValueError):
    pass


NUMERAL_RE = re.compile(r"^[-+]?[0-9]+(?:\.[0-9]+)?$")
PERCENT_RE = re.compile(r"^[-+]?[0-9]+(?:\.[0-9]+)?%$")

# Order matters: "+/-" before single punctuation, numerals before words.
# A leading "-" is a sign only when it does not follow a letter or digit.
_TOKEN_RE = re.compile(
    r"""
    \+/-
    | (?:(?<![^\W_])-)?[0-9]+(?:\.[0-9]+)?%?(?![^\W_]|\.[^\W_])
    | [^\W_]+(?:\.[^\W_]+)*
    | _+
    | \S
    """,
    re.VERBOSE,
)

_ABBREVIATIONS = {"e.g", "i.e", "vs", "fig", "figs", "al", "approx", "ref", "no", "dr"}
_BOUNDARY_RE = re.compile(r"[.!?]+(?=\s+|$)")


@dataclass
class RawAbstract:
    source_id: str
    body: str

    def __post_init__(self):
        if not self.body.strip():
            raise ValueError(f"abstract {self.source_id!r} has an empty body")


@dataclass
class TokenizedSentence:
    tokens: list[tuple[str, int, int]]
    numeral_positions: list[int] = field(default_factory=list)

    @property
    def words(self) -> list[str]:
        return [t[0] for t in self.tokens]

    @property
    def text(self) -> str:
        return " ".join(self.words)


def is_numeral(token: str, allow_percent: bool = False) -> bool:
    if NUMERAL_RE.match(token):
        return True
    return allow_percent and bool(PERCENT_RE.match(token))


def segment_sentences(abstract: RawAbstract | str) -> list[str]:
    """Split on terminal punctuation followed by whitespace or end of text.

    Decimals never split because their dot is not followed by whitespace.
    A few abbreviations and single-letter initials are protected.
    """
    body = abstract.body if isinstance(abstract, RawAbstract) else abstract
    sentences = []
    start = 0
    for m in _BOUNDARY_RE.finditer(body):
        if m.group() == ".":
            before = body[start:m.start()].split()
            last = before[-1].lower().lstrip("([{\"'") if before else ""
            if last in _ABBREVIATIONS or (len(last) == 1 and last.isalpha()):
                continue
        piece = body[start:m.end()].strip()
        if piece:
            sentences.append(piece)
        start = m.end()
    tail = body[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _with_offsets(words: list[str]) -> list[tuple[str, int, int]]:
    out, pos = [], 0
    for w in words:
        out.append((w, pos, pos + len(w)))
        pos += len(w) + 1
    return out


def tokenize(sentence: str) -> TokenizedSentence:
    """Segment ``sentence`` into words; offsets index the space-joined output."""
    words = _TOKEN_RE.findall(sentence)
    positions = [i for i, w in enumerate(words) if is_numeral(w, allow_percent=True)]
    return TokenizedSentence(_with_offsets(words), positions)


def percent_to_decimal(token: str) -> str:
    """``"58%"`` -> ``"0.58"``; shortest exact rendering, integers without a dot."""
    if not token.endswith("%") or len(token) < 2:
        raise UnparseableNumeral(token)
    prefix = token[:-1]
    if not NUMERAL_RE.match(prefix):
        raise UnparseableNumeral(token)
    return decimal_string(Decimal(prefix) / 100)


def decimal_string(value: Decimal) -> str:
    out = format(value.normalize(), "f")
    return "0" if out in ("-0", "+0") else out


def normalize_numerals(sent: TokenizedSentence) -> TokenizedSentence:
    """Replace every ``X%`` token by the decimal value of X/100."""
    words = []
    for w in sent.words:
        if w.endswith("%") and len(w) > 1:
            try:
                words.append(percent_to_decimal(w))
            except (UnparseableNumeral, InvalidOperation):
                raise UnparseableNumeral(f"cannot convert {w!r} to a decimal") from None
        else:
            words.append(w)
    positions = [i for i, w in enumerate(words) if is_numeral(w)]
    return TokenizedSentence(_with_offsets(words), positions)


def filter_numeral_sentences(sents: list[TokenizedSentence]) -> list[TokenizedSentence]:
    return [s for s in sents if s.numeral_positions]


def prepare_sentence(text: str) -> TokenizedSentence:
    """Tokenize and normalize one raw sentence."""
    return normalize_numerals(tokenize(text))


def preprocess_abstract(abstract: RawAbstract, keep_all: bool = False) -> list[TokenizedSentence]:
    sents = [prepare_sentence(s) for s in segment_sentences(abstract)]
    return sents if keep_all else filter_numeral_sentences(sents)


def load_abstracts(path: str | Path) -> list[RawAbstract]:
    """Abstracts from a JSONL file of ``{source_id, body}`` or a directory of ``*.txt``."""
    path = Path(path)
    if path.is_dir():
        return [RawAbstract(p.stem, p.read_text(encoding="utf-8")) for p in sorted(path.glob("*.txt"))]
    out = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(RawAbstract(str(rec["source_id"]), rec["body"]))
    return out


def write_sentence_files(abstracts: list[RawAbstract], out_dir: str | Path, keep_all: bool = False) -> int:
    """Write ``<source_id>.txt`` (one sentence per line), an empty ``.ann`` for
    BRAT, and a ``sentences.jsonl`` sidecar. Returns the sentence count."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    with (out_dir / "sentences.jsonl").open("w", encoding="utf-8") as side:
        for ab in abstracts:
            sents = preprocess_abstract(ab, keep_all=keep_all)
            if not sents:
                continue
            (out_dir / f"{ab.source_id}.txt").write_text("".join(s.text + "\n" for s in sents), encoding="utf-8")
            (out_dir / f"{ab.source_id}.ann").write_text("", encoding="utf-8")
            for i in range(len(sents)):
                side.write(json.dumps({"doc_id": f"{ab.source_id}:{i}", "source_id": ab.source_id, "sentence_ordinal": i}) + "\n")
            n += len(sents)
    return n
