"""Exception types shared across the package.

Plain argument validation raises ``ValueError``; the classes below cover
failures that callers are expected to catch and handle individually.
"""


class StegattnError(Exception):
    """Base class for package-specific failures."""


class CapacityExceededError(StegattnError):
    """Payload needs more slots than the embedding plan provides."""

    def __init__(self, available_bits: int, required_bits: int):
        self.available_bits = available_bits
        self.required_bits = required_bits
        super().__init__(
            f"payload needs {required_bits} bits but the plan offers "
            f"{available_bits}"
        )


class NotStegoError(StegattnError):
    """Frame header did not decode: wrong magic/version, wrong models, or
    wrong straddling seed."""


class CorruptPayloadError(StegattnError):
    """Frame header decoded but the body is truncated.

    ``recovered_bits`` holds the prefix that could still be read.
    """

    def __init__(self, message: str, recovered_bits):
        self.recovered_bits = recovered_bits
        super().__init__(message)


class TrainingDivergedError(StegattnError):
    """Loss became non-finite; ``last_state`` is the most recent finite
    parameter snapshot."""

    def __init__(self, message: str, last_state=None, metrics=None):
        self.last_state = last_state
        self.metrics = metrics or []
        super().__init__(message)


class PreconditionError(StegattnError):
    """A pipeline stage was invoked without its prerequisite artifact."""


class ChecksumError(StegattnError):
    """Stored checkpoint digest does not match its contents."""
