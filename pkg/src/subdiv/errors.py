"""Exception types shared across the package."""


class SubdivError(Exception):
    """Base class for all package errors."""


class SupportViolation(SubdivError):
    """A density that must be positive evaluated to zero (log density -inf) or NaN.

    Raised when a sampled pair falls outside the support of one of the
    densities entering a log weight, which means the equal-support assumption
    between inference and meta-inference is broken.
    """

    def __init__(self, message, branch=None, replicate=None):
        super().__init__(message)
        self.branch = branch
        self.replicate = replicate


class InsufficientSamples(SubdivError):
    pass


class SupportMismatch(SubdivError):
    """Two finite distributions being compared do not share a support."""


class EmptyConditional(SubdivError):
    """Every value of a Gibbs site has zero target mass."""


class MixedTargets(SubdivError):
    """Composed kernels declare different targets."""


class TargetMismatch(SubdivError):
    """A kernel is paired with a target other than the one it declares."""


class AllWeightsZero(SubdivError):
    def __init__(self, step):
        super().__init__(f"all particle weights are zero at step {step}")
        self.step = step


class InconsistentHistory(SubdivError):
    pass


class ZeroEvidence(SubdivError):
    pass


class SingularCovariance(SubdivError):
    pass


class EnumerationTooLarge(SubdivError):
    pass


class ConfigError(SubdivError):
    """Invalid experiment configuration.

    ``errors`` is a list of ``(field_path, message)`` pairs.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.errors)
        super().__init__(f"invalid config: {lines}")
