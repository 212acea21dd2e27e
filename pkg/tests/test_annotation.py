import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from numtag.annotation import (
    DanglingRelation,
    MalformedLine,
    MisalignedEntity,
    SurfaceMismatch,
    align_to_words,
    parse_standoff,
    read_brat_dir,
    read_brat_pair,
    to_standoff,
    validate_doc,
    write_brat_pair,
)
from numtag.synth import TEMPLATES, corpus_docs, generate_corpus, realize

TEXT = "the mean age was 67.6 years"


def test_parse_single_entity():
    doc = parse_standoff(TEXT, "T1\tNum 17 21\t67.6\n")
    assert len(doc.entities) == 1
    ent = doc.entities[0]
    assert (ent.kind, ent.char_start, ent.char_end, ent.surface) == ("Num", 17, 21, "67.6")


def test_parse_entity_with_relation():
    ann = "T1\tNum 17 21\t67.6\nT2\tUnit 22 27\tyears\nR1\thas_unit Arg1:T1 Arg2:T2\n"
    doc = parse_standoff(TEXT, ann)
    assert len(doc.entities) == 2
    assert len(doc.relations) == 1
    rel = doc.relations[0]
    assert (rel.kind, doc.entity(rel.source).kind, doc.entity(rel.target).kind) == ("has_unit", "Num", "Unit")


def test_dangling_relation():
    with pytest.raises(DanglingRelation):
        parse_standoff(TEXT, "T1\tNum 17 21\t67.6\nR1\thas_unit Arg1:T1 Arg2:T9\n")


def test_surface_must_match_slice():
    with pytest.raises(SurfaceMismatch):
        parse_standoff(TEXT, "T1\tNum 17 21\t67.7\n")


@pytest.mark.parametrize(
    "line",
    ["T1\tWeight 17 21\t67.6", "T1\tNum 21 17\t67.6", "E1\tNum 17 21\t67.6", "T1 Num 17 21 67.6"],
)
def test_malformed_lines(line):
    with pytest.raises(MalformedLine):
        parse_standoff(TEXT, line + "\n")


def test_align_word_spans():
    ann = "T1\tTarg 4 12\tmean age\nT2\tNum 17 21\t67.6\n"
    doc = align_to_words(parse_standoff(TEXT, ann))
    assert doc.words[:5] == ["the", "mean", "age", "was", "67.6"]
    assert (doc.entity("T1").word_start, doc.entity("T1").word_end) == (1, 2)
    assert (doc.entity("T2").word_start, doc.entity("T2").word_end) == (4, 4)


def test_align_rejects_partial_token():
    with pytest.raises(MisalignedEntity):
        align_to_words(parse_standoff(TEXT, "T1\tTarg 5 12\tean age\n"))


FIG_DOC = (
    "T1\tTarg 4 12\tmean age\nT2\tNum 17 21\t67.6\nT3\tUnit 22 27\tyears\n"
    "R1\thas_unit Arg1:T2 Arg2:T3\nR2\thas_metric Arg1:T2 Arg2:T1\n"
)


def test_valid_doc_has_no_violations():
    assert validate_doc(align_to_words(parse_standoff(TEXT, FIG_DOC))) == []


def test_two_metrics_violate_closest_rule():
    text = "the mean age was 67.6 years"
    ann = FIG_DOC + "T4\tTarg 0 3\tthe\nR3\thas_metric Arg1:T2 Arg2:T4\n"
    rules = [v.rule for v in validate_doc(align_to_words(parse_standoff(text, ann)))]
    assert rules == ["TooManyMetrics"]


def test_unit_as_relation_source():
    ann = FIG_DOC + "R3\thas_unit Arg1:T3 Arg2:T3\n"
    rules = [v.rule for v in validate_doc(align_to_words(parse_standoff(TEXT, ann)))]
    assert "BadRelationSource" in rules


def test_violation_names_offender():
    ann = FIG_DOC + "R3\thas_unit Arg1:T3 Arg2:T3\n"
    (v,) = [v for v in validate_doc(align_to_words(parse_standoff(TEXT, ann))) if v.rule == "BadRelationSource"]
    assert v.ref == "R3"


def test_num_entity_must_be_numeral():
    rules = [v.rule for v in validate_doc(align_to_words(parse_standoff(TEXT, "T1\tNum 0 3\tthe\n")))]
    assert "NumNotNumeral" in rules


def _content(doc):
    ents = sorted((e.kind, e.char_start, e.char_end, e.surface) for e in doc.entities)

    def key(eid):
        e = doc.entity(eid)
        return e.char_start, e.char_end

    rels = sorted((r.kind, key(r.source), key(r.target)) for r in doc.relations)
    return ents, rels


def test_brat_pair_rebases_offsets(tmp_path):
    docs = corpus_docs(generate_corpus(12, seed=3))
    path = tmp_path / "pair.txt"
    write_brat_pair(docs, path)
    back = read_brat_pair(path)
    assert [d.text for d in back] == [d.text for d in docs]
    for a, b in zip(docs, back):
        # ids are renumbered file-wide, so compare content only
        assert _content(a) == _content(b)
        assert validate_doc(b) == []
    assert len(read_brat_dir(tmp_path)) == len(docs)


def test_cross_line_relation_rejected(tmp_path):
    (tmp_path / "x.txt").write_text("a 1 b\nc d\n")
    (tmp_path / "x.ann").write_text("T1\tNum 2 3\t1\nT2\tUnit 6 7\tc\nR1\thas_unit Arg1:T1 Arg2:T2\n")
    with pytest.raises(MalformedLine):
        read_brat_pair(tmp_path / "x.txt")


generated = st.builds(
    lambda k, seed: realize(TEMPLATES[k], np.random.default_rng(seed)),
    st.integers(0, len(TEMPLATES) - 1),
    st.integers(0, 2**32 - 1),
)


@settings(max_examples=60, deadline=None)
@given(generated)
def test_standoff_round_trip(pair):
    text, ann = pair
    doc = parse_standoff(text, ann, "d")
    again = parse_standoff(text, to_standoff(doc), "d")
    assert again.entities == doc.entities
    assert again.relations == doc.relations


@settings(max_examples=60, deadline=None)
@given(generated)
def test_entity_tokens_rejoin_to_surface(pair):
    doc = align_to_words(parse_standoff(*pair))
    for ent in doc.entities:
        assert " ".join(doc.words[ent.word_start:ent.word_end + 1]) == ent.surface


@settings(max_examples=40, deadline=None)
@given(generated, st.booleans())
def test_validate_is_idempotent_and_pure(pair, add_bad_relation):
    text, ann = pair
    if add_bad_relation:
        ann += "R9\thas_metric Arg1:T1 Arg2:T1\n"
    doc = align_to_words(parse_standoff(text, ann))
    before = (list(doc.entities), list(doc.relations), doc.text)
    first = validate_doc(doc)
    assert validate_doc(doc) == first
    assert (list(doc.entities), list(doc.relations), doc.text) == before
    assert bool(first) or not add_bad_relation
