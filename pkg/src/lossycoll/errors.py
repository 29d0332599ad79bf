"""Exception hierarchy shared by the codecs, transport and collectives."""

from __future__ import annotations


class LossyCollError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(LossyCollError, ValueError):
    """An argument is outside its documented domain."""


class IngestionError(LossyCollError, ValueError):
    """Input data is unusable (non-finite values, short files, ...)."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class QuantizationError(LossyCollError):
    """Quantized values do not fit the 32-bit integer range, or the bound is
    finer than float32 can represent for some value."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class FormatError(LossyCollError):
    """A compressed buffer is malformed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChunkAborted(LossyCollError):
    """A progress hook asked a chunked codec to stop."""


class TransportError(LossyCollError):
    """Point-to-point delivery failed."""


class HandshakeError(TransportError):
    pass


class RankCollisionError(HandshakeError):
    pass


class CollectiveError(LossyCollError):
    """A collective failed; carries rank and round context."""

    def __init__(self, message: str, rank: int | None = None, round: int | None = None):
        prefix = []
        if rank is not None:
            prefix.append(f"rank {rank}")
        if round is not None:
            prefix.append(f"round {round}")
        if prefix:
            message = f"[{', '.join(prefix)}] {message}"
        super().__init__(message)
        self.rank = rank
        self.round = round
