"""BRAT standoff reading, writing and validation.

Only two line types are understood::

    T1<TAB>Num 17 21<TAB>67.6
    R1<TAB>has_unit Arg1:T1 Arg2:T2

Entity kinds are ``Num``, ``Unit`` and ``Targ`` (the metric). Relation kinds
are ``has_unit`` (Num -> Unit) and ``has_metric`` (Num -> Targ). Offsets count
Unicode code points, which is what Python string indexing already does.

A ``.txt`` file holds one pre-tokenized sentence per line. Its ``.ann`` file
uses offsets into the whole file; :func:`read_brat_pair` rebases them so each
sentence becomes its own :class:`AnnotatedDoc`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .preprocess import is_numeral

ENTITY_KINDS = ("Num", "Unit", "Targ")
RELATION_KINDS = {"has_unit": "Unit", "has_metric": "Targ"}

_ENTITY_RE = re.compile(r"^(T\d+)\t(\S+) (\d+) (\d+)\t(.*)$")
_RELATION_RE = re.compile(r"^(R\d+)\t(\S+) Arg1:(\S+) Arg2:(\S+)$")


class AnnotationError(ValueError):
    """Base class for standoff problems."""


class MalformedLine(AnnotationError):
    pass


class SurfaceMismatch(AnnotationError):
    pass


class DanglingRelation(AnnotationError):
    pass


class MisalignedEntity(AnnotationError):
    pass


@dataclass(frozen=True)
class Entity:
    id: str
    kind: str
    char_start: int
    char_end: int
    surface: str
    word_start: int | None = None
    word_end: int | None = None  # inclusive


@dataclass(frozen=True)
class RelationAnn:
    id: str
    kind: str
    source: str
    target: str


@dataclass(frozen=True)
class Violation:
    rule: str
    ref: str
    message: str


@dataclass
class AnnotatedDoc:
    doc_id: str
    text: str
    tokens: list[tuple[str, int, int]]
    entities: list[Entity] = field(default_factory=list)
    relations: list[RelationAnn] = field(default_factory=list)

    @property
    def words(self) -> list[str]:
        return [t[0] for t in self.tokens]

    def entity(self, entity_id: str) -> Entity:
        for e in self.entities:
            if e.id == entity_id:
                return e
        raise KeyError(entity_id)

    def numerals(self) -> list[Entity]:
        return [e for e in self.entities if e.kind == "Num"]

    def related(self, num_id: str, kind: str) -> list[Entity]:
        """Entities linked from numeral ``num_id`` by relations of ``kind``."""
        return [self.entity(r.target) for r in self.relations if r.source == num_id and r.kind == kind]


def whitespace_tokens(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in re.finditer(r"\S+", text)]


def _parse_entity_line(line: str) -> Entity:
    m = _ENTITY_RE.match(line)
    if not m:
        raise MalformedLine(f"cannot parse entity line: {line!r}")
    eid, kind, start, end, surface = m.groups()
    if kind not in ENTITY_KINDS:
        raise MalformedLine(f"unknown entity kind {kind!r} in {line!r}")
    start, end = int(start), int(end)
    if start >= end:
        raise MalformedLine(f"empty or inverted span in {line!r}")
    return Entity(eid, kind, start, end, surface)


def _parse_relation_line(line: str) -> RelationAnn:
    m = _RELATION_RE.match(line)
    if not m:
        raise MalformedLine(f"cannot parse relation line: {line!r}")
    rid, kind, src, tgt = m.groups()
    if kind not in RELATION_KINDS:
        raise MalformedLine(f"unknown relation kind {kind!r} in {line!r}")
    return RelationAnn(rid, kind, src, tgt)


def parse_ann_lines(ann_lines: str) -> tuple[list[Entity], list[RelationAnn]]:
    """Parse standoff lines without looking at the text."""
    entities, relations = [], []
    for raw in ann_lines.splitlines():
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("T"):
            entities.append(_parse_entity_line(line))
        elif line.startswith("R"):
            relations.append(_parse_relation_line(line))
        else:
            raise MalformedLine(f"unsupported annotation line: {line!r}")
    return entities, relations


def _check_relations(entities: list[Entity], relations: list[RelationAnn]) -> None:
    ids = {e.id for e in entities}
    for r in relations:
        for arg in (r.source, r.target):
            if arg not in ids:
                raise DanglingRelation(f"{r.id} references unknown entity {arg}")


def parse_standoff(source_text: str, ann_lines: str, doc_id: str = "") -> AnnotatedDoc:
    """Parse one sentence and its standoff annotation into a doc.

    Tokens are taken from whitespace since sentences are pre-tokenized.
    Entities are not aligned to words yet; see :func:`align_to_words`.
    """
    entities, relations = parse_ann_lines(ann_lines)
    for e in entities:
        if e.char_end > len(source_text) or source_text[e.char_start:e.char_end] != e.surface:
            raise SurfaceMismatch(
                f"{e.id}: stored surface {e.surface!r} != text slice "
                f"{source_text[e.char_start:e.char_end]!r}"
            )
    _check_relations(entities, relations)
    return AnnotatedDoc(doc_id, source_text, whitespace_tokens(source_text), entities, relations)


def align_to_words(doc: AnnotatedDoc) -> AnnotatedDoc:
    """Return a copy of ``doc`` whose entities carry inclusive word spans."""
    starts = {s: i for i, (_, s, _) in enumerate(doc.tokens)}
    ends = {e: i for i, (_, _, e) in enumerate(doc.tokens)}
    aligned = []
    for ent in doc.entities:
        if ent.char_start not in starts or ent.char_end not in ends:
            raise MisalignedEntity(
                f"{ent.id} [{ent.char_start},{ent.char_end}) {ent.surface!r} cuts through a token"
            )
        ws, we = starts[ent.char_start], ends[ent.char_end]
        if we < ws:
            raise MisalignedEntity(f"{ent.id} has an empty word span")
        aligned.append(replace(ent, word_start=ws, word_end=we))
    return replace(doc, entities=aligned)


def validate_doc(doc: AnnotatedDoc) -> list[Violation]:
    """Check the invariants label generation relies on.

    Returns an empty list for a usable doc. Nothing is raised.
    """
    out: list[Violation] = []
    prev_end = -1
    for i, (surface, s, e) in enumerate(doc.tokens):
        if s < prev_end or e <= s or doc.text[s:e] != surface:
            out.append(Violation("BadTokens", f"token {i}", "token spans overlap or do not match text"))
            break
        prev_end = e

    by_id: dict[str, Entity] = {}
    for ent in doc.entities:
        if ent.id in by_id:
            out.append(Violation("DuplicateId", ent.id, "entity id used twice"))
        by_id[ent.id] = ent
        if not ent.char_start < ent.char_end:
            out.append(Violation("EmptySpan", ent.id, "char_start must be < char_end"))
        if doc.text[ent.char_start:ent.char_end] != ent.surface:
            out.append(Violation("SurfaceMismatch", ent.id, "surface differs from text slice"))
        if ent.word_start is None or ent.word_end is None:
            out.append(Violation("Unaligned", ent.id, "entity has no word span"))
        elif ent.kind == "Num":
            if ent.word_start != ent.word_end:
                out.append(Violation("NumNotSingleToken", ent.id, "a numeral must be one token"))
            elif not is_numeral(doc.tokens[ent.word_start][0]):
                out.append(Violation("NumNotNumeral", ent.id, f"{ent.surface!r} is not a numeral"))

    unit_count: dict[str, int] = {}
    metric_count: dict[str, int] = {}
    for rel in doc.relations:
        src, tgt = by_id.get(rel.source), by_id.get(rel.target)
        if src is None or tgt is None:
            out.append(Violation("DanglingRelation", rel.id, "argument is not a known entity"))
            continue
        if src.kind != "Num":
            out.append(Violation("BadRelationSource", rel.id, f"source {src.id} is {src.kind}, not Num"))
        if tgt.kind != RELATION_KINDS.get(rel.kind):
            out.append(Violation("BadRelationTarget", rel.id, f"{rel.kind} cannot point to {tgt.kind}"))
        if rel.kind == "has_unit":
            unit_count[rel.source] = unit_count.get(rel.source, 0) + 1
        elif rel.kind == "has_metric":
            metric_count[rel.source] = metric_count.get(rel.source, 0) + 1
        if (
            src.kind == "Num"
            and src.word_start is not None
            and tgt.word_start is not None
            and tgt.word_start <= src.word_start <= tgt.word_end
        ):
            out.append(Violation("TargetCoversNumeral", rel.id, "related span contains its own numeral"))

    for num_id, n in metric_count.items():
        if n > 1:
            out.append(Violation("TooManyMetrics", num_id, f"{n} has_metric relations, at most 1 allowed"))
    for num_id, n in unit_count.items():
        if n > 1:
            out.append(Violation("TooManyUnits", num_id, f"{n} has_unit relations, at most 1 allowed"))
    return out


def to_standoff(doc: AnnotatedDoc, offset: int = 0) -> str:
    """Serialize entities then relations, preserving order."""
    lines = [f"{e.id}\t{e.kind} {e.char_start + offset} {e.char_end + offset}\t{e.surface}" for e in doc.entities]
    lines += [f"{r.id}\t{r.kind} Arg1:{r.source} Arg2:{r.target}" for r in doc.relations]
    return "".join(line + "\n" for line in lines)


def read_brat_pair(txt_path: str | Path, ann_path: str | Path | None = None) -> list[AnnotatedDoc]:
    """Read a one-sentence-per-line ``.txt`` and its ``.ann`` into aligned docs.

    Doc ids are ``<stem>:<line number>`` (0-based). Empty lines are skipped.
    """
    txt_path = Path(txt_path)
    ann_path = Path(ann_path) if ann_path is not None else txt_path.with_suffix(".ann")
    text = txt_path.read_text(encoding="utf-8")
    ann = ann_path.read_text(encoding="utf-8") if ann_path.exists() else ""
    entities, relations = parse_ann_lines(ann)
    _check_relations(entities, relations)

    line_spans = []
    pos = 0
    for i, line in enumerate(text.split("\n")):
        line_spans.append((i, pos, pos + len(line), line))
        pos += len(line) + 1

    def line_of(ent: Entity) -> int:
        for i, s, e, _ in line_spans:
            if s <= ent.char_start and ent.char_end <= e:
                return i
        raise MisalignedEntity(f"{ent.id} crosses a sentence boundary or lies outside the text")

    ent_line = {}
    per_line: dict[int, tuple[list, list]] = {}
    for ent in entities:
        if text[ent.char_start:ent.char_end] != ent.surface:
            raise SurfaceMismatch(f"{txt_path.name} {ent.id}: {ent.surface!r} != {text[ent.char_start:ent.char_end]!r}")
        i = line_of(ent)
        ent_line[ent.id] = i
        start = line_spans[i][1]
        per_line.setdefault(i, ([], []))[0].append(
            replace(ent, char_start=ent.char_start - start, char_end=ent.char_end - start)
        )
    for rel in relations:
        i, j = ent_line[rel.source], ent_line[rel.target]
        if i != j:
            raise MalformedLine(f"{rel.id} links entities on different sentence lines")
        per_line.setdefault(i, ([], []))[1].append(rel)

    docs = []
    for i, _, _, line in line_spans:
        if not line.strip():
            continue
        ents, rels = per_line.get(i, ([], []))
        doc = AnnotatedDoc(f"{txt_path.stem}:{i}", line, whitespace_tokens(line), ents, rels)
        docs.append(align_to_words(doc))
    return docs


def write_brat_pair(docs: list[AnnotatedDoc], txt_path: str | Path, ann_path: str | Path | None = None) -> None:
    """Write docs one per line, renumbering ids so they are unique in the file."""
    txt_path = Path(txt_path)
    ann_path = Path(ann_path) if ann_path is not None else txt_path.with_suffix(".ann")
    text_parts, ann_lines = [], []
    offset = 0
    t_next, r_next = 1, 1
    for doc in docs:
        if "\n" in doc.text:
            raise ValueError(f"doc {doc.doc_id} spans several lines")
        id_map = {}
        for e in doc.entities:
            id_map[e.id] = f"T{t_next}"
            t_next += 1
            ann_lines.append(f"{id_map[e.id]}\t{e.kind} {e.char_start + offset} {e.char_end + offset}\t{e.surface}")
        for r in doc.relations:
            ann_lines.append(f"R{r_next}\t{r.kind} Arg1:{id_map[r.source]} Arg2:{id_map[r.target]}")
            r_next += 1
        text_parts.append(doc.text)
        offset += len(doc.text) + 1
    txt_path.write_text("".join(t + "\n" for t in text_parts), encoding="utf-8")
    ann_path.write_text("".join(a + "\n" for a in ann_lines), encoding="utf-8")


def read_brat_dir(directory: str | Path) -> list[AnnotatedDoc]:
    """All docs from every ``*.txt`` in ``directory`` (sorted by file name)."""
    docs = []
    for txt in sorted(Path(directory).glob("*.txt")):
        docs.extend(read_brat_pair(txt))
    return docs
