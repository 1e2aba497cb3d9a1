"""Quantized SSM inference core: rotations, quantizers, eval, accelerator model."""

import json as _json

try:
    from ._mambaq import *  # noqa: F401,F403  (installed wheel layout)
    from . import _mambaq as _core
except ImportError:  # build-tree layout: extension on PYTHONPATH
    from _mambaq import *  # noqa: F401,F403
    import _mambaq as _core

__version__ = "0.1.0"


def qperplexity(qdir, tokens):
    """Quantized perplexity plus scan op counters, as a dict."""
    return _json.loads(_core.qperplexity(qdir, list(tokens)))


def check_invariance(model_dir, tokens=64, seed=7, sabotage=False):
    """Rotated-vs-plain logit agreement report, as a dict."""
    return _json.loads(_core.check_invariance(model_dir, tokens, seed, sabotage))


def simulate(hw_path, model_config_path, **kw):
    """Accelerator report for one decode token, as a dict."""
    return _json.loads(_core.simulate(hw_path, model_config_path, **kw))
