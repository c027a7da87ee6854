"""Exception hierarchy for byzsim."""


class ByzSimError(Exception):
    """Base class for all library errors."""


# graph
class ConnectivityFailure(ByzSimError):
    pass


class NonStochasticInput(ByzSimError, ValueError):
    pass


class DisconnectedHonestSubgraph(ByzSimError):
    pass


# data
class BadMagic(ByzSimError, ValueError):
    pass


class CountMismatch(ByzSimError, ValueError):
    pass


class Truncated(ByzSimError, ValueError):
    pass


class InsufficientPool(ByzSimError, ValueError):
    pass


class IndexOutOfRange(ByzSimError, IndexError):
    pass


# loss
class DimensionMismatch(ByzSimError, ValueError):
    pass


class EmptyBatch(ByzSimError, ValueError):
    pass


class NoConvergence(ByzSimError, RuntimeError):
    pass


# aggregate / attack
class WeightMismatch(ByzSimError, ValueError):
    pass


class TooFewMessages(ByzSimError, ValueError):
    pass


class DegenerateTrial(ByzSimError):
    pass


class NoVisibleHonest(ByzSimError, ValueError):
    pass


# engine / bounds / config
class ConfigInvalid(ByzSimError, ValueError):
    """Raised for malformed or inconsistent run configurations.

    ``field`` names the offending dotted config key when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

    def __str__(self):
        msg = super().__str__()
        return f"{self.field}: {msg}" if self.field else msg


class ContractionViolated(ByzSimError, ValueError):
    pass
