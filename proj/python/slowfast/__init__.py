"""Slow manifolds and reduction maps of fast-slow systems, backed by a C++ core.

Errors raised by the core are ``SlowfastError`` instances whose ``args`` are
``(message, code)``; ``code`` is one of the names listed in the README.
"""

import json as _json

from ._slowfast import SlowfastError, fit_exponential, reduce, slow_manifold, systems
from . import _slowfast

__all__ = [
    "SlowfastError",
    "certify",
    "error_code",
    "fit_exponential",
    "reduce",
    "run_scenario",
    "slow_manifold",
    "systems",
]


def certify(system, eps=0.1, m=64, source="auto", overrides=None, seed=1):
    """Constants certificate and hypothesis table for a built-in example, as a dict."""
    return _json.loads(_slowfast.certify_json(system, eps, m, source, dict(overrides or {}), seed))


def run_scenario(spec):
    """Runs a scenario given as a dict (same schema as the JSON scenario files) and returns its report."""
    return _json.loads(_slowfast.run_scenario_json(_json.dumps(spec)))


def error_code(err):
    """Machine-readable code of a SlowfastError, e.g. ``"infeasible"``."""
    return err.args[1] if len(err.args) > 1 else None
