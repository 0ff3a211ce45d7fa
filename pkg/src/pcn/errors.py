"""Exception hierarchy shared by every layer of the stack."""

from __future__ import annotations


class PCNError(Exception):
    """Base class for all protocol errors."""


# naming
class MalformedName(PCNError, ValueError):
    pass


class UnknownPrincipal(PCNError, KeyError):
    pass


class ComponentTooLong(PCNError, ValueError):
    pass


class DecodeError(PCNError, ValueError):
    """Wire bytes do not parse under the expected layout."""


# identity
class InvalidState(PCNError):
    pass


class AnswerOutOfRange(PCNError, ValueError):
    pass


class CommitmentOutOfRange(PCNError, ValueError):
    pass


class NotPrefixOwner(PCNError):
    pass


class SignatureInvalid(PCNError):
    pass


# access
class MalformedPolicy(PCNError, ValueError):
    pass


class PolicySyntaxError(MalformedPolicy):
    def __init__(self, message: str, text: str, position: int) -> None:
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at column {position}\n  {text}\n  {pointer}")


class UnknownAttribute(PCNError, KeyError):
    pass


class PolicyNotSatisfied(PCNError):
    pass


class EpochMismatch(PCNError):
    pass


class IntegrityFailure(PCNError):
    pass


class EmptyAttributeSet(PCNError, ValueError):
    pass


class MissingMasterKey(PCNError):
    pass


class MissingSignature(PCNError):
    pass


# router
class NotAuthorized(PCNError):
    pass


# sync
class WriteNotVerified(PCNError):
    pass


class FetchFailed(PCNError):
    pass


class BaseMismatch(PCNError):
    pass


class NoNeighborsReachable(PCNError):
    pass


# replica management
class NotOwner(PCNError):
    pass


class NotDeviceName(PCNError, ValueError):
    pass


class BadSignature(PCNError):
    pass


# simulator
class ScenarioParseError(PCNError, ValueError):
    def __init__(self, message: str, line_no: int | None = None, line: str = "") -> None:
        self.line_no = line_no
        self.line = line
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{message}" + (f"\n  {line}" if line else ""))


class TimeLimitExceeded(PCNError):
    pass


class UnknownNode(PCNError, KeyError):
    pass
