"""Exception and warning types shared across the package.

Every exception carries a ``module`` attribute naming the subsystem that
raised it, so the command line tool can report provenance.
"""


class KillingFlagError(Exception):
    """Base class for all package errors."""

    module = "killingflag"


class ExprSyntaxError(KillingFlagError):
    """Malformed expression source.

    Attributes:
        position: 0-based character offset of the offending token.
        expected: short description of what would have been legal there.
    """

    module = "expr"

    def __init__(self, message, position, expected=None):
        super().__init__(message)
        self.position = position
        self.expected = expected


class UnknownVariable(KillingFlagError):
    """A name that is not one of the chart's coordinates."""

    module = "expr"

    def __init__(self, name, chart, position=None):
        super().__init__(f"unknown variable {name!r}; chart is {list(chart)}")
        self.name = name
        self.chart = tuple(chart)
        self.position = position


class DomainError(KillingFlagError):
    """Evaluation outside an operation's real domain (log of a nonpositive
    value, square root of a negative, division by zero)."""

    module = "expr"


class ShapeMismatch(KillingFlagError):
    """Tensor operands with incompatible shapes or variances."""

    module = "tensor"


class SingularMetric(KillingFlagError):
    """Metric determinant vanishes (or is below tolerance) at the point."""

    module = "tensor"


class SignatureMismatch(KillingFlagError):
    """Evaluated metric eigenvalue signs disagree with the declared
    signature at the analysis point."""

    module = "tensor"


class WrongDimension(KillingFlagError):
    """Operation restricted to a specific dimension (e.g. surfaces)."""

    module = "classify"


class NotRiemannian(KillingFlagError):
    """Operation requires a positive definite metric."""

    module = "classify"


class OrderCapExceeded(KillingFlagError):
    """A derivative-order cap was hit before the computation finished.

    Raised, never silently swallowed: for the derived flag it means the
    rank sequence did not stabilize within the configured cap.
    """

    module = "flag"


class OrderTooLow(KillingFlagError):
    """Jet solver needs expansion order at least 2."""

    module = "oracle"


class NotClosed(KillingFlagError):
    """A basis expected to span a bracket-closed subspace is not closed.

    Signals a regularity failure or a rank decision error upstream; the
    offending basis pair and the residual are attached.
    """

    module = "liealg"

    def __init__(self, message, pair=None, residual=None):
        super().__init__(message)
        self.pair = pair
        self.residual = residual


class UnknownCatalogEntry(KillingFlagError):
    """Requested catalog metric does not exist."""

    module = "cli"


class RegularityWarning(UserWarning):
    """Probe points disagree with the base point's rank sequence.

    The flag construction is only guaranteed to count Killing fields where
    the ranks are locally constant; disagreement is heuristic evidence that
    the analysis point is non-regular.
    """
