"""qleak: conditional-probability model checking, information leakage, and
diagnostic counterexamples over exact-rational Markov models."""

from .models import (
    Distribution,
    Ihs,
    MarkovModel,
    ModelError,
    Prior,
    Prob,
    QleakError,
    prior_of,
    validate_ihs,
    validate_model,
)
from .text import ParseError, emit_report, parse_model, serialize_model
from .formulas import FormulaError, parse_formula

__all__ = [
    "Distribution",
    "Ihs",
    "MarkovModel",
    "ModelError",
    "ParseError",
    "FormulaError",
    "Prior",
    "Prob",
    "QleakError",
    "emit_report",
    "parse_formula",
    "parse_model",
    "prior_of",
    "serialize_model",
    "validate_ihs",
    "validate_model",
]
