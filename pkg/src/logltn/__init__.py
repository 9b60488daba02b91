"""Fuzzy first-order logic grounded in log space, with a small autodiff tape."""

__version__ = "0.1.0"

from .errors import (
    GroundingError, LogicError, NNFError, NonFiniteLossError, ParseError, ShapeError,
    SpaceMixingError, UnboundVariableError,
)
from .formula import Knowledgebase, load_kb, parse_formula, parse_kb, pretty_print
from .nnf import is_nnf, to_nnf
from .semantics import GroundingEnv, Guard, Kind, SemanticsConfig, ground, sat_aggregate
from .training import TrainConfig, train
