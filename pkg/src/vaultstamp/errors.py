"""Exception hierarchy shared across the package.

Authentication and integrity failures are kept distinct from ordinary
operational errors so callers (and the CLI exit-code contract) can tell
"someone gave the wrong credentials or the data was tampered with" apart
from "the disk is full".
"""


class VaultError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(VaultError):
    """An argument violates a documented precondition (bad length, empty input)."""


class FormatError(VaultError):
    """A serialized artifact (envelope, log line, proof) does not parse."""


class AuthenticationError(VaultError):
    """AEAD tag verification failed: wrong password, wrong shares, or tampering."""


class IntegrityAlarmError(VaultError):
    """Recomputed digests disagree with the stored record.

    Distinct from AuthenticationError: decryption itself may have succeeded,
    so this signals an inconsistency between the record store and the stored
    file rather than a bad credential.
    """


class NotFoundError(VaultError):
    """Unknown file id, dataset id, or record."""


class ConflictError(VaultError):
    """A write collides with existing state (duplicate put, second receipt)."""


class LedgerCorruptionError(VaultError):
    """The local anchor ledger failed its hash-chain replay."""


class AnchorUnavailableError(VaultError):
    """The timestamp provider could not be reached after bounded retries."""
