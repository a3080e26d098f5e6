"""Exception hierarchy shared by all modules."""


class SheetWKBError(Exception):
    """Base class for every error raised by the package."""


# background and frequency admissibility
class StabilityViolated(SheetWKBError):
    pass


class DirectionExcluded(SheetWKBError):
    pass


class DegenerateRoot(SheetWKBError):
    pass


class ZeroTau(SheetWKBError):
    pass


class CharacteristicDegeneracy(SheetWKBError):
    pass


class ZeroMode(SheetWKBError):
    pass


class IdentityViolated(SheetWKBError):
    pass


# amplitude solver
class ResonantZeroSum(SheetWKBError):
    pass


class TruncationMismatch(SheetWKBError):
    pass


class NotSharp(SheetWKBError):
    pass


class BlowupDetected(SheetWKBError):
    pass


class GridMismatch(SheetWKBError):
    pass


# combinatorics
class NegativeOrder(SheetWKBError):
    pass


class ProfilesMissing(SheetWKBError):
    pass


class InversionFailed(SheetWKBError):
    pass


class IllConditionedFit(SheetWKBError):
    pass


# fast problem
class SolvabilityFailed(SheetWKBError):
    pass


class UnsupportedSourceClass(SheetWKBError):
    pass


class RealityViolated(SheetWKBError):
    pass


# WKB assembly
class OrderUnsupported(SheetWKBError):
    pass


class FredholmViolated(SheetWKBError):
    pass


class JumpIncompatible(SheetWKBError):
    pass


class NotMeanFree(SheetWKBError):
    pass


class FrontEscapesStrip(SheetWKBError):
    pass


# command line
class ParseError(SheetWKBError):
    pass


class SuiteFailed(SheetWKBError):
    pass
