"""Exception types shared across the library.

Every failure mode that callers are expected to branch on gets its own class;
generic ValueError/RuntimeError are reserved for programming errors.
"""


class GencomposeError(Exception):
    """Base class for all library-specific errors."""


class ShapeMismatch(GencomposeError):
    """Operands live on different domains (table shapes differ)."""


class DisjointSupport(GencomposeError):
    """A composition is identically zero because supports never overlap."""


class UnboundedRatio(GencomposeError):
    """A density ratio blows up: denominator vanishes where numerator does not."""


class EmptyObservations(GencomposeError):
    """An observation-conditioned posterior was requested with no observations."""


class BadWeights(GencomposeError):
    """Mixture weights are not a probability vector."""


class UnknownIdentifier(GencomposeError):
    """An expression references a base-model name that is not bound."""


class NonFiniteDetected(GencomposeError):
    """A NaN or infinity appeared in a numeric computation or training step."""


class ZeroObservationProbability(GencomposeError):
    """Guidance was evaluated at a state that assigns the observations zero mass."""


class InconsistentBases(GencomposeError):
    """Supplied base policies do not realize the supplied base distributions."""


class AllZeroDensity(GencomposeError):
    """Every mixture component underflowed to zero density at the query point."""


class QuadratureNonConvergence(GencomposeError):
    """Adaptive quadrature failed to converge within the refinement budget."""


class ConfigError(GencomposeError):
    """An experiment config file is malformed, has unknown keys, or bad values."""


class MissingCheckpoint(GencomposeError):
    """A command needs a checkpoint that has not been produced yet."""


class OracleMismatch(GencomposeError):
    """An exact-oracle sanity check failed before starting a long run."""
