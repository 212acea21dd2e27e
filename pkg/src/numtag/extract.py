"""Turn tag predictions back into numeral / unit / metric records."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    DEFAULT_MAX_LEN,
    METRIC,
    NONE,
    OOV,
    PAD,
    UNIT,
    OversizeInstance,
    Vocabulary,
    encode,
    expanded_to_word,
    mask_and_expand,
)
from .preprocess import TokenizedSentence
from .tagger import TaggerModel, predict_proba

INITIAL_HALF_WIDTH = 22
SPAN_JOIN = " … "


@dataclass(frozen=True)
class Span:
    start: int
    end: int  # inclusive
    text: str
    char_start: int | None = None
    char_end: int | None = None


@dataclass
class ExtractionRecord:
    doc_id: str
    numeral_value: str
    numeral_word_pos: int
    unit_spans: list[Span] = field(default_factory=list)
    metric_spans: list[Span] = field(default_factory=list)
    outer_metrics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def spans(ss):
            return [
                {"start": s.start, "end": s.end, "text": s.text, "char_start": s.char_start, "char_end": s.char_end}
                for s in ss
            ]

        return {
            "doc_id": self.doc_id,
            "numeral": self.numeral_value,
            "numeral_pos": self.numeral_word_pos,
            "units": spans(self.unit_spans),
            "metrics": spans(self.metric_spans),
            "outer_metrics": list(self.outer_metrics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractionRecord":
        def spans(ss):
            return [Span(s["start"], s["end"], s["text"], s.get("char_start"), s.get("char_end")) for s in ss]

        return cls(d["doc_id"], d["numeral"], d["numeral_pos"], spans(d["units"]), spans(d["metrics"]), list(d["outer_metrics"]))


def decode_labels(tags, tokens: list[str]) -> tuple[list[Span], list[Span]]:
    """Maximal runs of 1 become unit spans and runs of 2 metric spans.

    Positions are indices into ``tokens``; text is the space-joined tokens.
    """
    tags = [int(t) for t in tags]
    units, metrics = [], []
    i, n = 0, min(len(tags), len(tokens))
    while i < n:
        lab = tags[i]
        if lab == NONE:
            i += 1
            continue
        j = i
        while j + 1 < n and tags[j + 1] == lab:
            j += 1
        span = Span(i, j, " ".join(tokens[i:j + 1]))
        if lab == UNIT:
            units.append(span)
        elif lab == METRIC:
            metrics.append(span)
        i = j + 1
    return units, metrics


def inference_window(tokens: list[str], target_span: tuple[int, int], max_len: int = DEFAULT_MAX_LEN):
    """``target ± W`` words, shrinking W from 22 until the window fits ``max_len``."""
    start, end = target_span
    if end - start + 1 > max_len:
        raise OversizeInstance(f"target alone needs {end - start + 1} tokens")
    n = len(tokens)
    for w in range(INITIAL_HALF_WIDTH, -1, -1):
        w0, w1 = max(0, start - w), min(n - 1, end + w)
        if w1 - w0 + 1 <= max_len:
            return w0, w1
    raise OversizeInstance("no window fits")  # unreachable: w=0 always fits


def _tag_target(model, vocab, words, target_pos, max_len):
    """Tag one target numeral; returns (unit_spans, metric_spans) in word indices of ``words``."""
    tokens, span = mask_and_expand(words, target_pos)
    w0, w1 = inference_window(tokens, span, max_len)
    window = tokens[w0:w1 + 1]
    padded = window + [PAD] * (max_len - len(window))
    p = predict_proba(model, np.array(encode(padded, vocab)))
    tags = p.argmax(axis=-1)
    tags[len(window):] = NONE
    tags[span[0] - w0:span[1] - w0 + 1] = NONE
    units, metrics = decode_labels(tags, window)

    def to_words(s: Span) -> Span:
        return Span(expanded_to_word(s.start + w0, span), expanded_to_word(s.end + w0, span), s.text)

    return [to_words(s) for s in units], [to_words(s) for s in metrics]


def _with_chars(spans: list[Span], sentence: TokenizedSentence) -> list[Span]:
    toks = sentence.tokens
    return [Span(s.start, s.end, s.text, toks[s.start][1], toks[s.end][2]) for s in spans]


def extract_sentence(
    model: TaggerModel,
    vocab: Vocabulary,
    sentence: TokenizedSentence,
    doc_id: str = "",
    max_len: int = DEFAULT_MAX_LEN,
) -> list[ExtractionRecord]:
    """One record per numeral in ``sentence``, in sentence order."""
    words = sentence.words
    records = []
    for pos in sentence.numeral_positions:
        units, metrics = _tag_target(model, vocab, words, pos, max_len)
        records.append(
            ExtractionRecord(doc_id, words[pos], pos, _with_chars(units, sentence), _with_chars(metrics, sentence))
        )
    return records


def _collapse(words: list[str], spans: list[Span], target_pos: int, mask: str):
    """Replace each span by one ``mask`` token; returns new words and target index."""
    span_end = {s.start: s.end for s in spans}
    out, new_target, i = [], target_pos, 0
    while i < len(words):
        if i in span_end:
            out.append(mask)
            i = span_end[i] + 1
            continue
        if i == target_pos:
            new_target = len(out)
        out.append(words[i])
        i += 1
    return out, new_target


def extract_hierarchical(
    model: TaggerModel,
    vocab: Vocabulary,
    sentence: TokenizedSentence,
    doc_id: str = "",
    max_depth: int = 3,
    mask_token: str = OOV,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[ExtractionRecord]:
    """Like :func:`extract_sentence`, then mine outer metrics by masking.

    Each found metric span collapses to one ``mask_token`` and the same
    numeral is tagged again. A pass that finds no metric, or only metrics
    already seen, ends the search; at most ``max_depth`` passes run.
    Experimental: it only works if the model saw masked spans in training.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    records = extract_sentence(model, vocab, sentence, doc_id, max_len)
    for rec in records:
        words = sentence.words
        target = rec.numeral_word_pos
        metrics = rec.metric_spans
        seen = {s.text for s in metrics}
        for _ in range(1, max_depth):
            if not metrics:
                break
            words, target = _collapse(words, metrics, target, mask_token)
            _, metrics = _tag_target(model, vocab, words, target, max_len)
            fresh = [s for s in metrics if s.text not in seen]
            if not fresh:
                break
            for s in fresh:
                rec.outer_metrics.append(s.text)
                seen.add(s.text)
            metrics = fresh
    return records


def to_jsonl(records: list[ExtractionRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)


def read_jsonl(text: str) -> list[ExtractionRecord]:
    return [ExtractionRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def to_csv(records: list[ExtractionRecord]) -> str:
    """One row per numeral; multiple spans of a kind are joined with `` … ``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["doc_id", "numeral", "numeral_pos", "units", "metrics", "outer_metrics"])
    for r in records:
        writer.writerow([
            r.doc_id,
            r.numeral_value,
            r.numeral_word_pos,
            SPAN_JOIN.join(s.text for s in r.unit_spans),
            SPAN_JOIN.join(s.text for s in r.metric_spans),
            " | ".join(r.outer_metrics),
        ])
    return buf.getvalue()
