"""Exception hierarchy shared by every role.

`ProtocolError` subclasses are rejections a receiver raises while processing
an inbound message or request; the harness records them as outcomes.
"""


class AeakaError(Exception):
    """Base class for all library errors."""


class ProtocolError(AeakaError):
    """A message or request was rejected."""


class MalformedMessage(ProtocolError):
    pass


class UnexpectedMessage(ProtocolError):
    """A well-formed message of a variant the receiver does not accept."""


class StaleTimestamp(ProtocolError):
    pass


class ReplayDetected(ProtocolError):
    pass


class AuthFailure(ProtocolError):
    pass


class UnknownSession(ProtocolError):
    pass


class NoCapableCs(ProtocolError):
    pass


class UnknownEs(ProtocolError):
    """No bundle (device side) or no registration (TA side) for that ES."""


class EmptyPseudonymPool(ProtocolError):
    pass


class BadCredentials(ProtocolError):
    pass


class LockedOut(ProtocolError):
    pass


class RegistrationError(AeakaError):
    pass


class DuplicateRegistration(RegistrationError):
    pass


class UnknownCs(RegistrationError):
    pass


class InvalidCount(RegistrationError):
    pass


class NotFound(AeakaError):
    pass


class ScenarioError(AeakaError):
    pass


class StoreError(AeakaError):
    """Snapshot file missing, unreadable or inconsistent."""
