"""Deterministic synthetic corpus of annotated abstract-like sentences.

Templates cover the annotation situations that occur in trial abstracts:

* ``adjacent``   -- unit and metric right next to the numeral
* ``far``        -- one metric shared by a list of numerals far to its right
* ``nested``     -- a numeral inside a list under an outer heading; only the
                    closest metric is annotated
* ``unit_metric``-- count + unit followed by the metric (arm of a trial)
* ``none``       -- years, ranges and p-values with nothing attached
* ``stats``      -- percentages of a cohort, ratios with confidence intervals

Pattern syntax: ``{N1:dec}`` draws a filler of a category, ``{M2=p}`` fixes the
text, ``{MASK}`` emits a literal ``[oov]`` token. Slots starting with ``N``
are numerals, ``U`` units, ``M`` metrics; anything else is plain filler.
Numerals that do not come from an ``N`` slot (e.g. the 95 in "95% CI") are
annotated as numerals with no relations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotation import AnnotatedDoc, align_to_words, parse_standoff, validate_doc, write_brat_pair
from .dataset import NONE, build_instances, make_instances
from .preprocess import _with_offsets, is_numeral, percent_to_decimal, tokenize

MASK_TOKEN = "[oov]"

STAT_METRICS = [
    ("mean age", "age"),
    ("median age", "age"),
    ("median NIHSS score", "score"),
    ("mean NIHSS score at discharge", "score"),
    ("median ASPECTS", "score"),
    ("mean infarct volume", "volume"),
    ("median final infarct volume", "volume"),
    ("median onset-to-groin time", "time"),
    ("mean procedure time", "time"),
    ("median door-to-puncture time", "time"),
    ("mean follow-up", "months"),
    ("median length of stay", "days"),
    ("mean glucose level", "conc"),
    ("mean systolic blood pressure", "pressure"),
]

UNITS = {
    "age": ["years"],
    "score": ["points"],
    "volume": ["mL", "cm3"],
    "time": ["minutes", "min", "hours"],
    "months": ["months"],
    "days": ["days"],
    "conc": ["mg/dL", "mmol/L"],
    "pressure": ["mmHg"],
    "count": ["patients", "participants", "cases", "subjects", "procedures"],
}

OUTCOMES = [
    "successful reperfusion",
    "symptomatic intracranial hemorrhage",
    "mortality at 90 days",
    "functional independence",
    "first pass effect",
    "good functional outcome",
    "complete recanalization",
    "procedural complications",
    "distal embolization",
    "any intracranial hemorrhage",
    "early neurological improvement",
    "futile recanalization",
    "device-related complications",
    "vessel perforation",
    "emboli to new territory",
    "stroke recurrence",
]

TREATMENTS = [
    "EVT alone",
    "medical management",
    "bridging thrombolysis",
    "direct thrombectomy",
    "intravenous thrombolysis",
    "stent retriever",
    "contact aspiration",
    "general anesthesia",
    "conscious sedation",
    "combined technique",
]

RATIOS = ["odds ratio", "adjusted odds ratio", "hazard ratio", "risk ratio", "adjusted risk ratio"]

OUTER = ["major etiologic risk factors", "baseline characteristics", "secondary outcomes", "safety outcomes", "complications"]

FILLER_SUBJECTS = ["the cohort", "the registry", "this trial", "the study population", "both groups"]


@dataclass(frozen=True)
class Template:
    name: str
    archetype: str
    pattern: str
    plan: dict = field(default_factory=dict)  # numeral slot -> (unit slot | None, metric slot | None)


TEMPLATES = [
    Template("adjacent_stat", "adjacent", "the {M1:stat} was {N1:dec} {U1:stat} .", {"N1": ("U1", "M1")}),
    Template(
        "adjacent_sd_range",
        "adjacent",
        "results : the {M1:stat} was {N1:dec} +/- {N2:dec} {U1:stat} ( {M2=range} , {N3:int} - {N4:int} ) .",
        {"N1": ("U1", "M1"), "N2": ("U1", None), "N3": ("U1", "M2"), "N4": ("U1", "M2")},
    ),
    Template(
        "adjacent_iqr",
        "adjacent",
        "{X1:subject} had a {M1:stat} of {N1:dec} {U1:stat} ( {M2=IQR} {N2:dec} - {N3:dec} ) .",
        {"N1": ("U1", "M1"), "N2": ("U1", "M2"), "N3": ("U1", "M2")},
    ),
    Template("pct_of_count", "stats", "{N1:pct} of {U1:count} had {M1:outcome} .", {"N1": ("U1", "M1")}),
    Template(
        "count_and_pct",
        "stats",
        "{M1:outcome} occurred in {N1:int} {U1:count} ( {N2:pct} ) .",
        {"N1": ("U1", "M1"), "N2": ("U1", "M1")},
    ),
    Template(
        "fraction_of_count",
        "stats",
        "{M1:outcome} was achieved in {N1:pct} ( {N2:int} / {N3:int} ) of {U1:count} after {X1:treatment} .",
        {"N1": ("U1", "M1"), "N2": ("U1", "M1"), "N3": ("U1", None)},
    ),
    Template(
        "ratio_ci",
        "stats",
        "{M1:ratio} : {N1:dec} ( {M2=95% CI} , {N2:dec} - {N3:dec} ) for {X1:outcome} .",
        {"N1": (None, "M1"), "N2": (None, "M2"), "N3": (None, "M2")},
    ),
    Template(
        "p_value",
        "stats",
        "{M1:outcome} differed between groups ( {M2=p} < {N1:p} ) .",
        {"N1": (None, "M2")},
    ),
    Template(
        "far_list",
        "far",
        "{M1:stat} was measured at {N1:int} , {N2:int} and {N3:int} {U1:stat} in {X1:subject} .",
        {"N1": ("U1", "M1"), "N2": ("U1", "M1"), "N3": ("U1", "M1")},
    ),
    Template(
        "far_margins",
        "far",
        "{M1=non-inferiority margins} for {X1:outcome} were tested in {X2:subject} : {N1:dec} , {N2:dec} and {N3:dec} .",
        {"N1": (None, "M1"), "N2": (None, "M1"), "N3": (None, "M1")},
    ),
    Template(
        "nested_list",
        "nested",
        "among {N1:int} {U1:count} , the {X1:outer} were {M1:outcome} ( {N2:pct} ) and {M2:outcome} ( {N3:pct} ) .",
        {"N1": ("U1", None), "N2": (None, "M1"), "N3": (None, "M2")},
    ),
    Template(
        "unit_then_metric",
        "unit_metric",
        "{N1:int} {U1:count} received {M1:treatment} and {N2:int} {U2:count} received {M2:treatment} .",
        {"N1": ("U1", "M1"), "N2": ("U2", "M2")},
    ),
    Template(
        "respectively",
        "far",
        "{N1:int} , {N2:int} and {N3:int} {U1:count} were treated with {M1:treatment} , {M2:treatment} and {M3:treatment} , respectively .",
        {"N1": ("U1", "M1"), "N2": ("U1", "M2"), "N3": ("U1", "M3")},
    ),
    Template(
        "unit_then_metric_single",
        "unit_metric",
        "of these , {N1:int} {U1:count} were treated with {M1:treatment} .",
        {"N1": ("U1", "M1")},
    ),
    Template(
        "years",
        "none",
        "{U1:count} treated between {N1:year} and {N2:year} were enrolled .",
        {"N1": (None, None), "N2": (None, None)},
    ),
    Template(
        "bare_numbers",
        "none",
        "- {N1:int} : {N2:dec} versus {N3:dec} ; p < {N4:p} )",
        {"N1": (None, None), "N2": (None, None), "N3": (None, None), "N4": (None, None)},
    ),
]

# Outer/inner metric pairs: the plain version annotates only the inner
# (closest) metric; the masked version replaces it with [oov] and annotates
# the outer one, which is what recursive extraction needs to learn.
NESTED_PLAIN = Template(
    "nested_outer",
    "nested",
    "the {M2:outer_metric} of {M1:outcome} was {N1:pct} in {X1:subject} .",
    {"N1": (None, "M1")},
)
NESTED_MASKED = Template(
    "nested_outer_masked",
    "nested",
    "the {M2:outer_metric} of {MASK} was {N1:pct} in {X1:subject} .",
    {"N1": (None, "M2")},
)
OUTER_METRICS = ["rate", "incidence", "proportion", "frequency"]

DEFAULT_WEIGHTS = {
    "adjacent_stat": 1,
    "adjacent_sd_range": 2,
    "adjacent_iqr": 2,
    "pct_of_count": 1,
    "count_and_pct": 2,
    "fraction_of_count": 2,
    "ratio_ci": 1,
    "p_value": 1,
    "far_list": 2,
    "far_margins": 1,
    "nested_list": 1,
    "respectively": 2,
    "unit_then_metric": 2,
    "unit_then_metric_single": 1,
    "years": 1,
    "bare_numbers": 0.5,
}

_SLOT_RE = re.compile(r"(\{[^}]+\})")


def _numeral(rng, kind: str) -> str:
    if kind == "dec":
        return f"{rng.uniform(0.1, 120):.{int(rng.integers(1, 3))}f}"
    if kind == "int":
        return str(int(rng.integers(2, 900)))
    if kind == "pct":
        value = rng.uniform(1, 99)
        return f"{value:.1f}%" if rng.random() < 0.3 else f"{int(value)}%"
    if kind == "p":
        return str(rng.choice(["0.001", "0.01", "0.05", "0.03", "0.04", "0.002"]))
    if kind == "year":
        return str(int(rng.integers(2005, 2023)))
    if kind == "neg":
        return f"-{rng.uniform(0.1, 5):.2f}"
    raise ValueError(f"unknown numeral kind {kind!r}")


def _choice(rng, items):
    return items[int(rng.integers(len(items)))]


class _Filler:
    """Draws slot texts, keeping stat metrics and their units consistent."""

    def __init__(self, rng):
        self.rng = rng
        self.stat_kind = None

    def __call__(self, slot: str, category: str) -> str:
        rng = self.rng
        if slot.startswith("N"):
            return _numeral(rng, category)
        if category == "stat" and slot.startswith("M"):
            metric, self.stat_kind = _choice(rng, STAT_METRICS)
            return metric
        if category == "stat" and slot.startswith("U"):
            return _choice(rng, UNITS[self.stat_kind or "time"])
        pools = {
            "count": UNITS["count"],
            "outcome": OUTCOMES,
            "treatment": TREATMENTS,
            "ratio": RATIOS,
            "outer": OUTER,
            "outer_metric": OUTER_METRICS,
            "subject": FILLER_SUBJECTS,
        }
        if category not in pools:
            raise ValueError(f"unknown slot category {category!r}")
        return _choice(rng, pools[category])


def realize(template: Template, rng=None, fills: dict | None = None) -> tuple[str, str]:
    """Render one template into (normalized sentence text, standoff annotation)."""
    fills = dict(fills or {})
    filler = _Filler(rng if rng is not None else np.random.default_rng(0))
    words: list[str] = []
    slot_spans: dict[str, tuple[int, int]] = {}
    raw_pieces = []
    for piece in _SLOT_RE.split(template.pattern):
        if not piece.strip():
            continue
        if piece == "{MASK}":
            toks = [MASK_TOKEN]
            raw_pieces.append(None)
        elif piece.startswith("{"):
            body = piece[1:-1]
            if "=" in body:
                name, text = body.split("=", 1)
            else:
                name, category = body.split(":", 1)
                text = fills[name] if name in fills else filler(name, category)
            toks = tokenize(text).words
            raw_pieces.append(text)
            slot_spans[name] = (len(words), len(words) + len(toks) - 1)
        else:
            toks = tokenize(piece).words
            raw_pieces.append(piece)
        words.extend(toks)

    # Piecewise tokenization must agree with tokenizing the whole sentence.
    placeholder = "MASKPLACEHOLDER"
    joined = " ".join(placeholder if p is None else p for p in raw_pieces)
    whole = [MASK_TOKEN if w == placeholder else w for w in tokenize(joined).words]
    if whole != words:
        raise ValueError(f"template {template.name} tokenizes inconsistently: {whole} vs {words}")

    words = [percent_to_decimal(w) if w.endswith("%") and len(w) > 1 else w for w in words]
    tokens = _with_offsets(words)
    text = " ".join(words)

    ent_ids: dict[str, str] = {}
    lines_t: list[tuple[int, str, str, int, int]] = []

    def entity(slot: str, kind: str) -> str:
        if slot not in ent_ids:
            ws, we = slot_spans[slot]
            ent_ids[slot] = slot
            lines_t.append((tokens[ws][1], slot, kind, tokens[ws][1], tokens[we][2]))
        return ent_ids[slot]

    relations = []
    for num_slot, (unit_slot, metric_slot) in template.plan.items():
        entity(num_slot, "Num")
        if unit_slot:
            relations.append(("has_unit", num_slot, entity(unit_slot, "Unit")))
        if metric_slot:
            relations.append(("has_metric", num_slot, entity(metric_slot, "Targ")))
    numeral_slot_starts = {slot_spans[s][0] for s in template.plan}
    for i, w in enumerate(words):
        if is_numeral(w) and i not in numeral_slot_starts:
            key = f"_num{i}"
            slot_spans[key] = (i, i)
            entity(key, "Num")

    lines_t.sort()
    renamed = {slot: f"T{k + 1}" for k, (_, slot, *_rest) in enumerate(lines_t)}
    ann = [f"{renamed[slot]}\t{kind} {s} {e}\t{text[s:e]}" for _, slot, kind, s, e in lines_t]
    ann += [f"R{k + 1}\t{kind} Arg1:{renamed[a]} Arg2:{renamed[b]}" for k, (kind, a, b) in enumerate(relations)]
    return text, "".join(line + "\n" for line in ann)


def _allocate(n: int, weights: dict[str, float]) -> list[str]:
    """Exact per-template counts by largest remainder."""
    names = sorted(weights)
    total = sum(weights[k] for k in names)
    quotas = [n * weights[k] / total for k in names]
    counts = [int(q) for q in quotas]
    order = sorted(range(len(names)), key=lambda i: (-(quotas[i] - counts[i]), names[i]))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return [name for name, c in zip(names, counts) for _ in range(c)]


def generate_corpus(
    n_sentences: int,
    seed: int = 0,
    weights: dict[str, float] | None = None,
    nested_fraction: float = 0.0,
    nested_mask_fraction: float = 0.5,
) -> list[tuple[str, str]]:
    """``n_sentences`` (text, standoff) pairs, identical for identical arguments.

    ``nested_fraction`` of the sentences use the outer/inner metric pair; of
    those, ``nested_mask_fraction`` have the inner metric masked.
    """
    if n_sentences < 1:
        raise ValueError("n_sentences must be >= 1")
    weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
    if not weights:
        raise ValueError("empty template set")
    by_name = {t.name: t for t in TEMPLATES + [NESTED_PLAIN, NESTED_MASKED]}
    n_nested = int(round(nested_fraction * n_sentences))
    n_masked = int(round(nested_mask_fraction * n_nested))
    plan = _allocate(n_sentences - n_nested, weights) if n_sentences > n_nested else []
    plan += [NESTED_MASKED.name] * n_masked + [NESTED_PLAIN.name] * (n_nested - n_masked)
    order = np.random.default_rng([seed, 0xC0FFEE]).permutation(len(plan))
    corpus = []
    for i, j in enumerate(order):
        rng = np.random.default_rng([seed, i])
        corpus.append(realize(by_name[plan[j]], rng))
    return corpus


def corpus_docs(corpus: list[tuple[str, str]], prefix: str = "synth") -> list[AnnotatedDoc]:
    """Parse, align and validate generated pairs."""
    docs = []
    for i, (text, ann) in enumerate(corpus):
        doc = align_to_words(parse_standoff(text, ann, f"{prefix}:{i}"))
        problems = validate_doc(doc)
        if problems:
            raise ValueError(f"generated doc {doc.doc_id} is invalid: {problems}")
        docs.append(doc)
    return docs


def write_corpus(corpus: list[tuple[str, str]], out_dir: str | Path, per_file: int = 100, prefix: str = "synth") -> list[Path]:
    """Write ``<prefix>_000.txt/.ann`` pairs of at most ``per_file`` sentences."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs = corpus_docs(corpus, prefix)
    paths = []
    for k in range(0, len(docs), per_file):
        path = out_dir / f"{prefix}_{k // per_file:03d}.txt"
        write_brat_pair(docs[k:k + per_file], path)
        paths.append(path)
    return paths


HIST_EDGES = list(range(0, 51, 5))


def corpus_stats(docs: list[AnnotatedDoc]) -> dict:
    """Counts, effective-range length histogram and farthest entity offsets.

    Histogram buckets are ``1-5, 6-10, ..., 46-50, >50`` over effective-range
    lengths in expanded tokens. Farthest offsets are in original words,
    measured from the target numeral to the far edge of a related entity.
    """
    buckets = {f"{lo + 1}-{lo + 5}": 0 for lo in HIST_EDGES[:-1]}
    buckets[">50"] = 0
    stats = {
        "sentences": len(docs),
        "instances": 0,
        "no_entity_instances": 0,
        "unit_instances": 0,
        "metric_instances": 0,
        "effective_range_hist": buckets,
        "farthest_before": 0,
        "farthest_after": 0,
        "max_window_length": 0,
    }
    if not docs:
        return stats
    for doc in docs:
        for num in doc.numerals():
            related = doc.related(num.id, "has_unit") + doc.related(num.id, "has_metric")
            for ent in related:
                stats["farthest_before"] = max(stats["farthest_before"], num.word_start - ent.word_start)
                stats["farthest_after"] = max(stats["farthest_after"], ent.word_end - num.word_start)
        for raw in make_instances(doc):
            stats["instances"] += 1
            labels = raw.labels
            stats["unit_instances"] += 1 in labels
            stats["metric_instances"] += 2 in labels
            stats["no_entity_instances"] += all(lab == NONE for lab in labels)
            positions = [i for i, lab in enumerate(labels) if lab != NONE] + list(raw.meta["target_span"])
            length = max(positions) - min(positions) + 1
            key = ">50" if length > 50 else f"{(length - 1) // 5 * 5 + 1}-{(length - 1) // 5 * 5 + 5}"
            buckets[key] += 1
    for inst in build_instances(docs):
        w0, w1 = inst.meta["window"]
        stats["max_window_length"] = max(stats["max_window_length"], w1 - w0 + 1)
    return stats
