"""Accept / Reject outcome values shared by the validating operations."""

from dataclasses import dataclass
from enum import Enum
from typing import Union


class TokenRejectReason(str, Enum):
    UNKNOWN_USER = "UnknownUser"
    BAD_DIGEST = "BadDigest"
    STALE_CREATED = "StaleCreated"
    REPLAYED_NONCE = "ReplayedNonce"


class EnvelopeRejectReason(str, Enum):
    PARSE_ERROR = "ParseError"
    DECRYPTION_FAILED = "DecryptionFailed"
    STALE_TIMESTAMP = "StaleTimestamp"
    TOKEN_INVALID = "TokenInvalid"
    DIGEST_MISMATCH = "DigestMismatch"
    SIGNATURE_INVALID = "SignatureInvalid"
    UNTRUSTED_CERTIFICATE = "UntrustedCertificate"
    POLICY_VIOLATION = "PolicyViolation"


class SessionRejectReason(str, Enum):
    WRONG_SESSION = "WrongSession"
    NR_GAP = "NrGap"
    NR_REPLAY = "NrReplay"


@dataclass(frozen=True)
class Accept:
    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Reject:
    reason: Enum
    detail: str = ""

    def __bool__(self) -> bool:
        return False

    def __str__(self) -> str:
        if self.detail:
            return f"{self.reason.value}: {self.detail}"
        return self.reason.value


Verdict = Union[Accept, Reject]

ACCEPT = Accept()
