"""Exception hierarchy shared by the engine and the job runner."""

from __future__ import annotations


class BlobTRError(Exception):
    """Base class for every error raised by the package."""


# exact algebra
class BasepointMismatch(BlobTRError):
    pass


class TruncationInsufficient(BlobTRError):
    pass


class DivisionByZeroJet(BlobTRError, ZeroDivisionError):
    pass


class KindMismatch(BlobTRError):
    pass


class NonzeroResidue(BlobTRError):
    pass


class NonzeroAnchor(BlobTRError):
    pass


class IrreducibleFactor(BlobTRError):
    pass


# curve data
class DuplicateKeyPoint(BlobTRError):
    pass


class ZeroLeadingCoefficient(BlobTRError):
    pass


class BasisMismatch(BlobTRError):
    pass


# recursion
class DegenerateCurve(BlobTRError):
    pass


class SingularLinearSystem(BlobTRError):
    pass


class NonzeroResidueAtKeyPoint(BlobTRError):
    pass


# convolution
class UngradedInput(BlobTRError):
    pass


class OverlappingPoleSets(BlobTRError):
    pass


# KP side
class IrregularBasepoint(BlobTRError):
    pass


class CoincidentPoints(BlobTRError):
    pass


class ThetaVanishesAtOrigin(BlobTRError):
    pass


class NonInvertibleDenominator(BlobTRError):
    pass


class CoincidentDivisorPoints(BlobTRError):
    pass


# job runner
class ConfigError(BlobTRError):
    """Anything that should map to exit code 2."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownCheckName(ConfigError):
    pass


class CapOutOfRange(ConfigError):
    pass


class GoldenMismatch(BlobTRError):
    pass
