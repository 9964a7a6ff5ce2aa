"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures onto
its documented statuses: 2 for validation or leakage failures, 3 for malformed
input and 4 for numerical degeneracy.
"""

from __future__ import annotations


class RegionAblateError(Exception):
    exit_code = 1


class ValidationError(RegionAblateError, ValueError):
    exit_code = 2


class MalformedInput(RegionAblateError, ValueError):
    exit_code = 3


class NumericalDegeneracy(RegionAblateError, ArithmeticError):
    exit_code = 4


# corpus
class MalformedClipName(MalformedInput):
    pass


class DuplicateClip(MalformedInput):
    pass


class QuotaMismatch(ValidationError):
    pass


class EmptySplit(ValidationError):
    pass


class LeakageDetected(ValidationError):
    def __init__(self, shared_uids):
        self.shared_uids = tuple(shared_uids)
        preview = ", ".join(self.shared_uids[:5])
        more = "" if len(self.shared_uids) <= 5 else f" (+{len(self.shared_uids) - 5} more)"
        super().__init__(f"{len(self.shared_uids)} UID(s) shared across splits: {preview}{more}")


# imageops
class DegenerateConfiguration(NumericalDegeneracy):
    pass


class FrameTooSmall(ValidationError):
    pass


class FaceCoversFrame(ValidationError):
    pass


class DimensionMismatch(MalformedInput):
    pass


class EmptyInput(ValidationError):
    pass


# stats
class LengthMismatch(MalformedInput):
    pass


class TooFewSamples(ValidationError):
    pass


class ConstantInput(NumericalDegeneracy):
    pass


class RhoAtUnity(NumericalDegeneracy):
    pass


class InvalidAlpha(ValidationError):
    pass


class EmptyVideo(ValidationError):
    pass


# trainkit
class OutOfRange(ValidationError):
    pass


class EmptyClip(ValidationError):
    pass


class NonFiniteGradient(NumericalDegeneracy):
    pass


class MissingPairedCondition(MalformedInput):
    pass
