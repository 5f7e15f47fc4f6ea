"""Category-guided visual question generation.

Thin wrappers over the compiled ``_vqg`` extension; JSON results are
returned as Python objects.
"""

import json
import os

from . import _vqg
from ._vqg import (
    ConfigError,
    NumericError,
    ParseError,
    VqgError,
    category_names,
    detokenize,
    tokenize,
)

__all__ = [
    "ConfigError",
    "NumericError",
    "ParseError",
    "VqgError",
    "ablate",
    "build_vocab",
    "category_names",
    "check",
    "dataset_stats",
    "detokenize",
    "evaluate",
    "generate",
    "make_synthetic",
    "score",
    "tokenize",
    "train",
]


def _path(p):
    return os.fspath(p) if p is not None else ""


def score(pairs):
    """Score (hypothesis_tokens, [reference_tokens, ...]) pairs."""
    return json.loads(_vqg.score([(list(h), [list(r) for r in refs]) for h, refs in pairs]))


def dataset_stats(questions, annotations, category_map):
    return json.loads(_vqg.dataset_stats(_path(questions), _path(annotations), _path(category_map)))


def build_vocab(questions, annotations, category_map, out, test_fraction=0.0):
    return json.loads(
        _vqg.build_vocab(_path(questions), _path(annotations), _path(category_map), _path(out), test_fraction)
    )


def make_synthetic(output_dir, n_images, n_categories=4, seed=0):
    return json.loads(_vqg.make_synthetic(_path(output_dir), n_images, n_categories, seed))


def train(config, output_dir, resume=None):
    """Train one model. ``config`` holds optional "model", "train", "data" and "seed" entries."""
    return json.loads(_vqg.train(json.dumps(config), _path(output_dir), _path(resume)))


def ablate(config, output_dir, beam=0):
    return json.loads(_vqg.ablate(json.dumps(config), _path(output_dir), beam))


def generate(checkpoint, category, image_id=None, features=None, beam=0, max_len=20, vocab=None, feature_store=None):
    return json.loads(
        _vqg.generate(
            _path(checkpoint),
            category,
            image_id,
            list(features) if features is not None else [],
            beam,
            max_len,
            _path(vocab),
            _path(feature_store),
        )
    )


def evaluate(checkpoint, split="test", beam=0, vocab=None):
    return json.loads(_vqg.evaluate(_path(checkpoint), split, beam, _path(vocab)))


def check(seeds=10):
    return [{"name": n, "max_rel_error": e, "coordinates": c} for n, e, c in _vqg.check(seeds)]
