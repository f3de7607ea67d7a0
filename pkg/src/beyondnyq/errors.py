"""Exception types shared across the package."""

from __future__ import annotations


class NonUniqueModelError(Exception):
    """Raised when a least-squares FIR fit has no unique solution.

    Carries the :class:`~beyondnyq.regressor.IdentifiabilityReport` that
    explains why (too high an order for the available output samples, or a
    rank-deficient input such as a zero-order-hold excitation).
    """

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class NumericalError(RuntimeError):
    """A matrix factorization or solve failed.

    ``diagnostics`` holds condition-number estimates or other context useful
    for debugging the offending problem instance.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class OracleInapplicableError(RuntimeError):
    """The primal-form check requires a strictly positive definite kernel."""


class InvalidStartError(ValueError):
    """Hyperparameter search started at a point with a non-finite objective."""
