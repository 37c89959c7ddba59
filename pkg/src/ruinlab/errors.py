"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input object or configuration violates its contract."""


class NonHomogeneousChainError(ValueError):
    """Raised when a one-step transition matrix is requested for a settled trigger."""


class ReducibleChainError(ValueError):
    """Raised when a chain has no unique stationary distribution."""


class EnumerationBudgetError(RuntimeError):
    """Raised when exhaustive enumeration would exceed its branch budget."""

    def __init__(self, required: float, budget: float):
        self.required = required
        self.budget = budget
        super().__init__(
            f"exhaustive enumeration needs about {required:.3g} branches, "
            f"budget is {budget:.3g}"
        )
