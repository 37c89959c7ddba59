"""Finite-time ruin probabilities for a discrete-time risk model with delayed
by-claims and bonus-malus premiums."""

from .bonus_malus import PremiumScale, Principle, RuleSet, stationary_distribution, transition_matrix
from .claims import BUILTIN, JointClaimPMF, TablePMF
from .errors import (
    EnumerationBudgetError,
    NonHomogeneousChainError,
    ReducibleChainError,
    ValidationError,
)
from .ruin_engine import RuinQuery, RuinResult, ruin_probability

__version__ = "0.1.0"

__all__ = [
    "BUILTIN",
    "EnumerationBudgetError",
    "JointClaimPMF",
    "NonHomogeneousChainError",
    "PremiumScale",
    "Principle",
    "ReducibleChainError",
    "RuinQuery",
    "RuinResult",
    "RuleSet",
    "TablePMF",
    "ValidationError",
    "ruin_probability",
    "stationary_distribution",
    "transition_matrix",
]
