"""Exception hierarchy shared by every tidalflow module."""


class TidalflowError(Exception):
    """Base class for all domain failures."""


class ScenarioParseError(TidalflowError):
    pass


# network_model
class UnknownPool(TidalflowError):
    pass


class AllocationOutOfRange(TidalflowError):
    pass


class ZeroSaturationFlow(TidalflowError):
    pass


class SearchSpaceTooLarge(TidalflowError):
    pass


# demand_model
class UnknownAccess(TidalflowError):
    pass


class NegativeFlow(TidalflowError):
    pass


class UndefinedRatio(TidalflowError):
    pass


# signal_webster
class InvalidGreenRatio(TidalflowError):
    pass


class Oversaturated(TidalflowError):
    pass


class NoFlow(TidalflowError):
    pass


class InfeasibleDemand(TidalflowError):
    pass


class NonpositiveLostTime(TidalflowError):
    pass


# mesosim
class InfeasiblePlan(TidalflowError):
    pass


class ScheduleMismatch(TidalflowError):
    pass


# mcdm_weights
class NonReciprocal(TidalflowError):
    pass


class NonPositiveEntry(TidalflowError):
    pass


class DimensionTooLarge(TidalflowError):
    pass


class MissingScaler(TidalflowError):
    pass


class DegenerateTableWarning(UserWarning):
    """Every indicator column is constant; entropy weights fall back to uniform."""


# evo_optimizer
class ShapeMismatch(TidalflowError):
    pass


# dao_consensus
class InfeasibleLocalPlan(TidalflowError):
    pass


class NoCandidates(TidalflowError):
    pass


class LedgerError(TidalflowError):
    pass
