"""Exception types shared across the package."""

from __future__ import annotations


class CyclebenchError(Exception):
    """Base class for all cyclebench errors."""


# --- format detection / parsing ---

class UnknownFormat(CyclebenchError):
    def __init__(self, file_name: str):
        super().__init__(f"no registered profile matches {file_name!r}")
        self.file_name = file_name


class AmbiguousFormat(CyclebenchError):
    def __init__(self, file_name: str, candidates: list[str]):
        super().__init__(
            f"multiple profiles match {file_name!r}: {', '.join(sorted(candidates))}"
        )
        self.file_name = file_name
        self.candidates = sorted(candidates)


class InvalidProfile(CyclebenchError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ParseError(CyclebenchError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyFile(CyclebenchError):
    pass


class UnitError(CyclebenchError):
    pass


class MissingRequiredColumn(CyclebenchError):
    def __init__(self, column: str):
        super().__init__(f"required column {column!r} is not present")
        self.column = column


class ChannelMismatch(CyclebenchError):
    pass


# --- cycle engine ---

class NoCycles(CyclebenchError):
    pass


class DegenerateCycle(CyclebenchError):
    pass


class EmptyInput(CyclebenchError):
    pass


# --- analysis ---

class EmptySelection(CyclebenchError):
    pass


class BadBinWidth(CyclebenchError):
    pass


class MixedDomain(CyclebenchError):
    pass


class UnknownVariable(CyclebenchError):
    def __init__(self, variable: str):
        super().__init__(f"unknown plot variable {variable!r}")
        self.variable = variable


class NoPulsesFound(CyclebenchError):
    pass


class NonPositiveDeltaEt(CyclebenchError):
    pass


# --- store / service ---

class NotFound(CyclebenchError):
    pass


class ValidationError(CyclebenchError):
    pass


class ShardUnavailable(CyclebenchError):
    pass
