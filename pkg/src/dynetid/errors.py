"""Exception hierarchy for dynetid.

Every failure mode that callers are expected to handle gets its own class;
all of them derive from :class:`DynetidError` so that CLI code can map the
whole family onto exit codes.
"""


class DynetidError(Exception):
    """Base class for all dynetid errors."""


class PoleAtPoint(DynetidError):
    """Transfer-function evaluation requested at (or too close to) a pole."""


class ImproperResult(DynetidError):
    """An algebraic operation would produce a non-proper transfer function."""


class DegreeCapExceeded(DynetidError):
    """Polynomial arithmetic exceeded the supported degree bound."""


class SingularAtPoint(DynetidError):
    """I - G(z) is numerically singular at the requested evaluation point."""


class NotWellPosed(DynetidError):
    """The network has an unresolvable algebraic loop."""


class DivergenceDetected(DynetidError):
    """Simulated signals exceeded the divergence guard."""


class NoFeasibleSelection(DynetidError):
    """No predictor-input set satisfies the requested conditions."""


class AlgebraicEliminationFailure(DynetidError):
    """Node elimination hit a delay-free self-loop of unit gain."""


class MissingSignal(DynetidError):
    """A dataset does not contain a signal required by the operation."""


class RankDeficientRegressor(DynetidError):
    """Regressor matrix is numerically rank deficient (uninformative data)."""


class RankDeficientCorrelationBlock(DynetidError):
    """Stacked instrument correlations are numerically rank deficient."""


class ExternalPathViolation(DynetidError):
    """A projection signal reaches the output around the predictor inputs."""


class DelayConditionViolated(DynetidError):
    """A delay-free path connects the output to an instrumental variable."""


class IllPosedReference(DynetidError):
    """The reference model of a model set is not well posed."""


class SchemaError(DynetidError):
    """A JSON artifact does not match its documented schema."""
