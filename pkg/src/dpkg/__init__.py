"""Multi-hop question generation steered by question and document keywords, on a numpy autodiff core."""

from .annotate import AnnotationConfig, annotate, keyword_stats
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import Sample, SynthSpec, gen_synthetic, load_hotpot, load_musique, read_jsonl, write_jsonl
from .estimator import DPKGQuestionGenerator, KeywordAnnotator, check_samples
from .metrics import MetricReport, bleu4, meteor_exact, qa_em_f1, rouge_l, token_f1
from .model import (DPKGModel, DPKGNetwork, GenerationConfig, KeywordSet, MalformedKeywords, beam_search,
                    format_keywords, greedy_search, parse_keywords)
from .text import Vocab, build_vocab, tokenize
from .training import TrainConfig, train_loop

__version__ = "0.1.0"

__all__ = [
    "AnnotationConfig", "CheckpointError", "DPKGModel", "DPKGNetwork", "DPKGQuestionGenerator",
    "GenerationConfig", "KeywordAnnotator", "KeywordSet", "MalformedKeywords", "MetricReport", "Sample",
    "SynthSpec", "TrainConfig", "Vocab", "annotate", "beam_search", "bleu4", "build_vocab", "check_samples",
    "format_keywords", "gen_synthetic", "greedy_search", "keyword_stats", "load_checkpoint", "load_hotpot",
    "load_musique", "meteor_exact", "parse_keywords", "qa_em_f1", "read_jsonl", "rouge_l", "save_checkpoint",
    "token_f1", "tokenize", "train_loop", "write_jsonl",
]
