"""From a raw sentence and its standoff annotation to fixed-length training rows."""

import numpy as np

from numtag.annotation import align_to_words, parse_standoff, validate_doc
from numtag.dataset import build_vocab, effective_range, make_instances, truncate_and_pad
from numtag.preprocess import prepare_sentence

# %% tokenize + normalize: punctuation splits off, percents become decimals
sent = prepare_sentence("The mean age was 67.6 years (range, 18-95) and 58% were women.")
print(sent.text)
print("numerals at", sent.numeral_positions)

# %% annotate the first numeral by character offsets into the normalized text
text = sent.text
start = text.index("67.6")
ann = "\n".join([
    f"T1\tTarg {text.index('mean age')} {text.index('mean age') + 8}\tmean age",
    f"T2\tNum {start} {start + 4}\t67.6",
    f"T3\tUnit {start + 5} {start + 10}\tyears",
    "R1\thas_unit Arg1:T2 Arg2:T3",
    "R2\thas_metric Arg1:T2 Arg2:T1",
])
# the remaining numerals are plain Num entities without relations
for k, pos in enumerate(sent.numeral_positions[1:], start=4):
    _, s, e = sent.tokens[pos]
    ann += f"\nT{k}\tNum {s} {e}\t{text[s:e]}"

doc = align_to_words(parse_standoff(text, ann, "demo:0"))
print("violations:", validate_doc(doc))
for ent in doc.entities:
    print(f"  {ent.id} {ent.kind:5s} words {ent.word_start}-{ent.word_end}  {ent.surface!r}")

# %% one instance per numeral; the target is spelled out, the rest become [num]
raws = make_instances(doc)
first = raws[0]
for tok, lab in zip(first.tokens, first.labels):
    print(f"{tok:>8s} {lab}")

# %% the effective range bounds the target and its labels; +-5 words survive
rng = effective_range(first.tokens, first.labels, tuple(first.meta["target_span"]))
inst = truncate_and_pad(first)
print("effective range", rng, "window", inst.meta["window"], "length", len(inst.tokens))

# %% vocabulary: reserved ids first, then words by frequency
vocab = build_vocab([doc])
print(vocab.index_to_token[:20])
x = np.array([vocab.index(t) for t in inst.tokens])
print(x.reshape(5, 10))
