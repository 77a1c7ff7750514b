"""Exception hierarchy for the mobility prediction pipeline"""

from pathlib import Path
from typing import Optional


class MobilityError(Exception):
    """Base class for every error raised by the package"""


class UsageError(MobilityError):
    """Bad command-line usage"""


# Numerics

class ShapeMismatch(MobilityError, ValueError):
    pass


class IndexOutOfRange(MobilityError, IndexError):
    pass


class NonFiniteValue(MobilityError, ValueError):
    pass


class NonFiniteGradient(MobilityError, ValueError):
    pass


# Data

class OutOfGrid(MobilityError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MalformedRow(MobilityError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DuplicateObservation(MobilityError, ValueError):
    def __init__(self, user_id: int, day: int, slot: int):
        self.user_id = user_id
        self.day = day
        self.slot = slot
        super().__init__(f"duplicate observation for uid={user_id} day={day} slot={slot}")


class EmptySplit(MobilityError, ValueError):
    pass


class InvalidNoise(MobilityError, ValueError):
    pass


# Tokenizer / model

class IndivisibleLength(MobilityError, ValueError):
    pass


class EmptySegment(MobilityError, ValueError):
    pass


class DimMismatch(MobilityError, ValueError):
    pass


class ChecksumMismatch(MobilityError):
    def __init__(self, expected: str, actual: str, path: Optional[Path] = None):
        self.expected = expected
        self.actual = actual
        where = f" ({path})" if path else ""
        super().__init__(f"backbone checksum mismatch{where}: expected {expected[:12]}, got {actual[:12]}")


class AllTargetsMissing(MobilityError, ValueError):
    pass


# Semantic

class CacheMiss(MobilityError, KeyError):
    def __init__(self, digest: bytes):
        self.digest = digest
        super().__init__(f"prompt digest not in cache: {digest.hex()}")

    def __str__(self) -> str:
        return self.args[0]


class CacheFormatError(MobilityError):
    pass


# Training

class NonFiniteLoss(MobilityError):
    pass


class FrozenParameterError(MobilityError):
    pass


class CheckpointFormatError(MobilityError):
    pass


# Metrics

class NoObservedTargets(MobilityError, ValueError):
    pass


class EmptySequence(MobilityError, ValueError):
    pass
