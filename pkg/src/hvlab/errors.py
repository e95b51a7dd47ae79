"""Exception hierarchy shared by all hvlab modules."""


class HVLabError(Exception):
    """Base class for every error raised by hvlab."""


class ConfigError(HVLabError):
    """Invalid experiment configuration or inconsistent construction arguments."""


class NumericalFailure(HVLabError):
    """A computation could not be carried out to the required accuracy."""


class ZeroState(NumericalFailure):
    pass


class BadSubset(ConfigError):
    pass


class ShapeMismatch(ConfigError):
    pass


class UnstableStep(NumericalFailure):
    pass


class IndistinguishableBranches(NumericalFailure):
    pass


class NodeRegion(NumericalFailure):
    """Velocity requested where the (marginal) density is below the node floor."""

    def __init__(self, message, density=None):
        super().__init__(message)
        self.density = density


class StateUnavailable(NumericalFailure):
    pass


class OverlappingBranches(ConfigError):
    pass


class BadSubsystem(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class AcceptanceFailure(HVLabError):
    """A scenario ran to completion but missed an acceptance threshold."""
