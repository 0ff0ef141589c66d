"""Exception types shared across the simulator."""

from __future__ import annotations


class AirfedError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(AirfedError, ValueError):
    """An option, bit width, or scheme string is outside the supported grammar."""


class NumericInputError(AirfedError, ValueError):
    """An input array contains values the operation cannot encode (NaN, inf, empty)."""


class ProtocolError(AirfedError, ValueError):
    """A transmission-protocol precondition was violated (length or power mismatch)."""


class DatasetFormatError(AirfedError, ValueError):
    """A dataset file failed to parse or validate; the message carries the location."""


class TrainingDivergenceError(AirfedError, RuntimeError):
    """Local training produced a non-finite loss or gradient.

    ``client_id`` and ``round_index`` are attached by the layers that know
    them, so the failure can be traced to a specific client and round.
    """

    def __init__(self, message: str, client_id: int | None = None,
                 round_index: int | None = None):
        super().__init__(message)
        self.client_id = client_id
        self.round_index = round_index

    def with_context(self, client_id: int | None = None,
                     round_index: int | None = None) -> "TrainingDivergenceError":
        err = TrainingDivergenceError(
            str(self),
            client_id=self.client_id if client_id is None else client_id,
            round_index=self.round_index if round_index is None else round_index,
        )
        return err

    def __str__(self) -> str:
        base = super().__str__()
        tags = []
        if self.client_id is not None:
            tags.append(f"client={self.client_id}")
        if self.round_index is not None:
            tags.append(f"round={self.round_index}")
        return f"{base} [{', '.join(tags)}]" if tags else base
