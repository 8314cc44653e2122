"""Exception hierarchy shared across the package.

Every error carries enough structure to be serialized as a machine-readable
JSON object on the CLI's stderr.
"""

from __future__ import annotations


class TextMelError(Exception):
    """Base class for all package errors."""

    def to_json(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


# --- text front end ---

class UnknownSymbol(TextMelError):
    def __init__(self, char: str, position: int):
        self.char = char
        self.position = position
        super().__init__(f"symbol {char!r} at position {position} is not in the vocabulary")


class EmptyInput(TextMelError):
    pass


class AlreadyBlanked(TextMelError):
    pass


class LengthMismatch(TextMelError):
    pass


class EmptyExpansion(TextMelError):
    pass


# --- audio features ---

class TooShort(TextMelError):
    pass


class RateMismatch(TextMelError):
    pass


class NoVoicedFrames(TextMelError):
    pass


# --- alignment ---

class Infeasible(TextMelError):
    def __init__(self, t_needed: int):
        self.t_needed = t_needed
        super().__init__(f"lattice too short: alignment needs at least {t_needed} frames")


class BadLattice(TextMelError):
    pass


class ParseError(TextMelError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


# --- nn / models ---

class ShapeMismatch(TextMelError):
    pass


class NonFinite(TextMelError):
    pass


class BadSchedule(TextMelError):
    pass


class ConfigInvalid(TextMelError):
    pass


# --- pipeline ---

class MissingLattice(TextMelError):
    pass


class FrameCountMismatch(TextMelError):
    pass


class EmptyDataset(TextMelError):
    pass


class CheckpointMissing(TextMelError):
    pass


class VocabMismatch(TextMelError):
    pass


class CorruptCheckpoint(TextMelError):
    pass
