"""Error hierarchy shared by every service module.

Each error carries a stable ``code`` string (what API clients dispatch on)
and the HTTP status the gateway maps it to.  Service modules raise these
directly; the gateway turns any ``RemoteLabError`` into a JSON error body.
"""

from __future__ import annotations


class RemoteLabError(Exception):
    code = "Internal"
    http_status = 500

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code

    def to_payload(self) -> dict:
        return {"error": {"code": self.code, "message": self.message}}


class InvalidArgument(RemoteLabError):
    code = "InvalidArgument"
    http_status = 400


class NotFound(RemoteLabError):
    code = "NotFound"
    http_status = 404


class PermissionDenied(RemoteLabError):
    code = "PermissionDenied"
    http_status = 403


class InvalidCredentials(RemoteLabError):
    code = "InvalidCredentials"
    http_status = 401


class TokenExpired(RemoteLabError):
    code = "TokenExpired"
    http_status = 403


class TokenInvalid(RemoteLabError):
    code = "TokenInvalid"
    http_status = 403


# -- organization ----------------------------------------------------------

class DuplicateName(RemoteLabError):
    code = "DuplicateName"
    http_status = 409


class GroupSizeViolation(RemoteLabError):
    code = "GroupSizeViolation"
    http_status = 400


class AlreadyGrouped(RemoteLabError):
    code = "AlreadyGrouped"
    http_status = 409


class NotEnrolled(RemoteLabError):
    code = "NotEnrolled"
    http_status = 400


class UnknownImage(RemoteLabError):
    code = "UnknownImage"
    http_status = 400


# -- booking ---------------------------------------------------------------

class InvalidWindow(RemoteLabError):
    code = "InvalidWindow"
    http_status = 400


class OverlapExisting(RemoteLabError):
    code = "OverlapExisting"
    http_status = 409


class SlotTaken(RemoteLabError):
    code = "SlotTaken"
    http_status = 409


class QuotaExceeded(RemoteLabError):
    code = "QuotaExceeded"
    http_status = 409


class NotEligible(RemoteLabError):
    code = "NotEligible"
    http_status = 403


class SlotInPast(RemoteLabError):
    code = "SlotInPast"
    http_status = 400


class AlreadyStarted(RemoteLabError):
    code = "AlreadyStarted"
    http_status = 409


# -- vm pool ---------------------------------------------------------------

class PoolExhausted(RemoteLabError):
    code = "PoolExhausted"
    http_status = 503


class DriverFailure(RemoteLabError):
    code = "DriverFailure"
    http_status = 502


class InvalidState(RemoteLabError):
    code = "InvalidState"
    http_status = 409


# -- sessions --------------------------------------------------------------

class TooEarly(RemoteLabError):
    code = "TooEarly"
    http_status = 400


class TooLate(RemoteLabError):
    code = "TooLate"
    http_status = 400


class NotParticipantEligible(RemoteLabError):
    code = "NotParticipantEligible"
    http_status = 403


class SessionNotActive(RemoteLabError):
    code = "SessionNotActive"
    http_status = 409


# -- relay -----------------------------------------------------------------

class WireError(RemoteLabError):
    code = "WireError"
    http_status = 400


class ConnectFailed(RemoteLabError):
    code = "ConnectFailed"
    http_status = 502


class DuplicateUpstream(RemoteLabError):
    code = "DuplicateUpstream"
    http_status = 409


class NoUpstream(RemoteLabError):
    code = "NoUpstream"
    http_status = 409


class StaleSequence(RemoteLabError):
    code = "StaleSequence"
    http_status = 409


class ChannelClosed(RemoteLabError):
    code = "ChannelClosed"
    http_status = 409


# -- collab ----------------------------------------------------------------

class BodyTooLarge(RemoteLabError):
    code = "BodyTooLarge"
    http_status = 413


class UnknownChannel(RemoteLabError):
    code = "UnknownChannel"
    http_status = 404


class KindMismatch(RemoteLabError):
    code = "KindMismatch"
    http_status = 400


class OutOfBounds(RemoteLabError):
    code = "OutOfBounds"
    http_status = 400


class AdapterFailure(RemoteLabError):
    code = "AdapterFailure"
    http_status = 502


# -- persistence -----------------------------------------------------------

class StorageFailure(RemoteLabError):
    code = "StorageFailure"
    http_status = 500


class CorruptLog(RemoteLabError):
    code = "CorruptLog"
    http_status = 500
