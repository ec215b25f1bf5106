"""MELA: a process algebra for spatial ecological models.

Parse ``.mela`` models, derive their transition semantics, simulate the
underlying continuous-time Markov chain and integrate its fluid ODE limit.
"""

from importlib import resources

from .ast import ModelDef
from .diagnostics import Diagnostic, has_errors
from .expr import RateError, eval_rate_expr
from .parser import ParseError, parse_file, parse_model
from .printer import format_model
from .semantics import (
    AggregateTransition,
    SystemState,
    TransitionLabel,
    enabled_transitions,
    individual_lts,
    initial_state,
)
from .space import Space, build_space, eval_destination, neighbours
from .validate import validate

CORPUS = ("si", "lv", "cholera", "nested")


def corpus_path(name: str):
    """Path of a bundled example model (``si``, ``lv``, ``cholera`` or ``nested``)."""
    return resources.files(__name__).joinpath("corpus", f"{name}.mela")


def load_corpus(name: str) -> ModelDef:
    return parse_model(corpus_path(name).read_text(encoding="utf-8"))


__all__ = [
    "AggregateTransition", "CORPUS", "Diagnostic", "ModelDef", "ParseError", "RateError", "Space",
    "SystemState", "TransitionLabel", "build_space", "corpus_path", "enabled_transitions",
    "eval_destination", "eval_rate_expr", "format_model", "has_errors", "individual_lts",
    "initial_state", "load_corpus", "neighbours", "parse_file", "parse_model", "validate",
]
