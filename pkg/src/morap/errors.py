"""Exception hierarchy shared by all modules."""


class MorapError(Exception):
    """Base class for every error raised by this package."""


class ModelValidationError(MorapError):
    """A model file or in-memory model violates a structural invariant."""


# logic
class LtlSyntaxError(MorapError, ValueError):
    pass


class NotCoSafe(MorapError, ValueError):
    pass


class ClosureBlowup(MorapError):
    pass


# model
class InvalidDfa(ModelValidationError):
    pass


class NotRewardFinite(ModelValidationError):
    pass


# numerics
class NonConvergence(MorapError):
    pass


class SingularSystem(MorapError):
    pass


class DimensionMismatch(MorapError, ValueError):
    pass


# assignment
class NonSquare(MorapError, ValueError):
    pass


class NotBistochastic(MorapError, ValueError):
    pass


class NoPerfectMatching(MorapError):
    pass


# geometry
class SolverFailure(MorapError):
    pass


class DegenerateDirection(MorapError):
    pass


# solver / oracle
class NoCertificate(MorapError):
    pass


class SizeGuard(MorapError):
    pass


class CycleGuard(MorapError):
    pass


# engine / warehouse
class InvalidConfig(MorapError, ValueError):
    pass


class GenerationFailure(MorapError):
    pass
