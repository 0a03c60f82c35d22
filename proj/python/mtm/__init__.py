"""Comment-quality classifier built on multi-target matching.

Thin wrappers over the C++ core. Configurations are plain dicts using the
same keys as the checkpoint header and the CLI's config echo.
"""

import json

from . import _core

__all__ = [
    "Model",
    "ablate",
    "default_config",
    "gradcheck",
    "label_for_likes",
    "metrics",
    "synth",
    "train",
]

label_for_likes = _core.label_for_likes


def synth(seed=7, news=200, comments_per_news=10):
    """Synthetic corpus as line-delimited JSON text."""
    return _core.synth(seed, news, comments_per_news)


def default_config():
    return json.loads(_core.default_config())


def _config(overrides):
    config = default_config()
    for key, value in (overrides or {}).items():
        if key not in config:
            raise KeyError(f"unknown config key: {key}")
        config[key] = value
    return json.dumps(config)


def train(corpus_path, config=None, ckpt_path=""):
    """Train on a corpus file; returns the epoch log and best/test metrics."""
    return json.loads(_core.train(str(corpus_path), _config(config), str(ckpt_path)))


def ablate(corpus_path, config=None, grid="paper"):
    """One metrics row per grid cell."""
    return json.loads(_core.ablate(str(corpus_path), _config(config), grid))


def gradcheck(seed=1, h=1e-4):
    return json.loads(_core.gradcheck(seed, h))


def metrics(tp, fp, tn, fn):
    return json.loads(_core.metrics(tp, fp, tn, fn))


class Model:
    """A trained checkpoint."""

    def __init__(self, path):
        self._model = _core.Model(str(path))

    @property
    def config(self):
        return json.loads(self._model.config_json)

    @property
    def vocab_size(self):
        return self._model.vocab_size

    def evaluate(self, corpus_path, split="valid"):
        return json.loads(self._model.evaluate_json(str(corpus_path), split))

    def score(self, title, abstract, comment, surroundings=()):
        """P(HIGH) and the 0-10 score with its info/cons/nove sub-scores."""
        return json.loads(self._model.score_json(list(title), list(abstract), list(comment),
                                                 [list(s) for s in surroundings]))
