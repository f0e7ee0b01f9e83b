"""Exception hierarchy.

Contract violations derive from :class:`ContractError` (a ``ValueError``);
I/O and remote-model failures derive from :class:`ClientFailure`.  The CLI
maps the former to exit code 1 and the latter to exit code 2.
"""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class ShapeMismatch(ContractError):
    pass


class OddGrid(ContractError):
    pass


class NonFiniteInput(ContractError):
    pass


class NotScalarLoss(ContractError):
    pass


class PrecisionError(ContractError):
    pass


class IndivisibleImage(ContractError):
    pass


class DimMismatch(ContractError):
    pass


class InvalidSequence(ContractError):
    pass


class InvalidBundle(ContractError):
    pass


class EmptyManifest(ContractError):
    pass


class NegativeTimestamp(ContractError):
    pass


class EmptyTarget(ContractError):
    pass


class UnknownGroup(ContractError):
    pass


class EmptyDataset(ContractError):
    pass


class InvalidConfig(ContractError):
    pass


class DuplicateSecond(ContractError):
    pass


class EmptyCaptions(ContractError):
    pass


class AmbiguousFilterResponse(ContractError):
    pass


class ParseError(ContractError):
    pass


class EmptyEvalSet(ContractError):
    pass


class CheckpointError(ContractError):
    """Malformed checkpoint bytes."""


class ClientFailure(RuntimeError):
    """A model client could not produce a response (after any retries)."""


class TransientClientError(ClientFailure):
    """A failure worth retrying: timeouts, connection resets, 429/5xx."""
