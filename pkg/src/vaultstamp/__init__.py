"""Confidential file archival with verifiable time provenance.

Files are encrypted client-side under password-derived per-file keys and
stored as opaque envelopes; a record store keeps the salts and digests; a
timestamp provider anchors a combined hash binding each plaintext to its
ciphertext, individually or batched under a Merkle root. Decryption needs
the password or, via two-party XOR escrow, both key shares.
"""

from .anchors import (
    AnchorManager,
    AnchorReceipt,
    ConcatBatchContext,
    FlushResult,
    LocalLedgerProvider,
    MerkleBatchContext,
    MODE_CONCAT_BATCH,
    MODE_IMMEDIATE,
    MODE_MERKLE_BATCH,
    RemoteAnchorProvider,
    verify_receipt,
)
from .config import CliConfig, build_engine, load_config
from .crypto import (
    CiphertextEnvelope,
    Digest,
    KdfParams,
    SharePair,
    combine_shares,
    decrypt,
    decrypt_stream,
    derive_key,
    encrypt,
    encrypt_stream,
    generate_salt,
    hash_bytes,
    hash_stream,
    split_key,
)
from .engine import ArchiveEngine, TimingCollector, UploadResult, VerifyReport
from .errors import (
    AnchorUnavailableError,
    AuthenticationError,
    ConflictError,
    FormatError,
    IntegrityAlarmError,
    LedgerCorruptionError,
    NotFoundError,
    ValidationError,
    VaultError,
)
from .provenance import (
    CombinedHash,
    MerkleProof,
    MerkleTree,
    combined_hash,
    file_combined_hash,
    merkle_build,
    merkle_prove,
    merkle_verify,
)
from .records import FileRecord, RecordStore
from .repository import DatasetRef, HttpRepository, LocalRepository, StoredFileRef
from .service import ArchiveService

__version__ = "0.1.0"
