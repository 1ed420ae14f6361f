"""Exception hierarchy shared by all numerical modules."""


class PrabGreenError(Exception):
    """Base class for all errors raised by this package."""


class NonConvergence(PrabGreenError):
    """A series did not meet its truncation criterion within the term cap."""


class DivergentParameters(PrabGreenError):
    """Double-series parameters violate the convergence conditions."""


class InvalidTerm(PrabGreenError):
    """A series term is genuinely infinite (unmatched numerator gamma pole)."""


class DomainError(PrabGreenError):
    """An argument lies outside the domain an operation is defined on."""


class QuadratureFailure(PrabGreenError):
    """A quadrature produced a non-finite result or could not be set up."""


class StepUnderflow(PrabGreenError):
    """A finite-difference step underflowed relative to the base point."""


class IncompatibleData(PrabGreenError):
    """Boundary/initial data fail the corner compatibility conditions."""


class ConfigError(PrabGreenError):
    """A run configuration is malformed; message carries the field path."""
