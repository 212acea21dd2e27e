"""Numeral-anchored extraction of units and metrics from scientific text.

Pipeline: BRAT standoff annotation -> masked, character-expanded tagging
instances -> bidirectional GRU tagger (numpy) -> soft dice evaluation ->
structured numeral / unit / metric records.
"""

from .annotation import AnnotatedDoc, align_to_words, parse_standoff, validate_doc
from .dataset import Vocabulary, build_instances, build_vocab, encode_instances, split_dataset
from .extract import ExtractionRecord, extract_hierarchical, extract_sentence
from .metrics import EvalReport, accuracy, evaluate, soft_dice
from .preprocess import prepare_sentence, segment_sentences, tokenize
from .tagger import ModelConfig, TaggerModel, init_model, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
