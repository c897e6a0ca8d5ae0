"""Error taxonomy shared across the package."""


class ConfigurationError(ValueError):
    """Invalid option value or inconsistent option combination."""


class ParseError(ValueError):
    """Malformed input file; message names the offending line."""


class ShapeError(ValueError):
    """Array shape or length does not match the declared model."""


class PartitionError(ValueError):
    """Shard assignment violates a partitioning guarantee."""


class ProtocolError(RuntimeError):
    """A message expected from a neighbor is missing or malformed."""


class NumericalError(RuntimeError):
    """An iterative numeric routine failed to converge."""


class RunAbortError(RuntimeError):
    """Training produced non-finite parameters; carries the round index."""

    def __init__(self, round_index: int, message: str = ""):
        self.round_index = round_index
        super().__init__(message or f"non-finite parameters at round {round_index}")


class UsageError(ValueError):
    """Bad command line or config file; maps to exit code 2."""
