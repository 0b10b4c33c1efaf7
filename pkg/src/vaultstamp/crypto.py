"""Core cryptographic primitives: streaming hash, password-based key
derivation, authenticated encryption in a fixed envelope format, and
two-party XOR key splitting.

All operations are pure or internally self-contained and safe to call from
multiple threads. Nothing in this module performs I/O beyond the streams it
is handed.

Envelope layout (bit-exact, little to parse by hand)::

    offset  size  field
    0       4     magic  b"GVR1"
    4       1     format version, 0x01
    5       12    AES-GCM nonce
    17      n     ciphertext body (same length as the plaintext)
    17+n    16    GCM authentication tag

Version 0x01 pins the primitive suite: SHA-512 digests, PBKDF2-HMAC-SHA512
key derivation (120,000 iterations by default), AES-256-GCM encryption.
"""

from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass
from typing import BinaryIO, Callable, Iterator

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import AuthenticationError, FormatError, ValidationError
from .streams import DEFAULT_CHUNK_SIZE, iter_chunks

DIGEST_LEN = 64
SALT_LEN = 16
KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 16

ENVELOPE_MAGIC = b"GVR1"
ENVELOPE_VERSION = 0x01
ENVELOPE_HEADER_LEN = len(ENVELOPE_MAGIC) + 1 + NONCE_LEN  # 17
ENVELOPE_OVERHEAD = ENVELOPE_HEADER_LEN + TAG_LEN  # 33

DEFAULT_KDF_ITERATIONS = 120_000

RandomSource = Callable[[int], bytes]


class Digest(bytes):
    """A 64-byte SHA-512 value. ``.hex()`` renders the canonical lowercase form."""

    def __new__(cls, value: bytes) -> "Digest":
        raw = bytes(value)
        if len(raw) != DIGEST_LEN:
            raise ValidationError(f"digest must be {DIGEST_LEN} bytes, got {len(raw)}")
        return super().__new__(cls, raw)

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        try:
            return cls(bytes.fromhex(text))
        except ValueError as exc:
            raise ValidationError(f"invalid digest hex: {exc}") from exc


@dataclass(frozen=True)
class KdfParams:
    """Key-derivation parameters recorded per file so verification stays exact."""

    salt: bytes
    iterations: int = DEFAULT_KDF_ITERATIONS
    key_length: int = KEY_LEN

    def __post_init__(self) -> None:
        if len(self.salt) != SALT_LEN:
            raise ValidationError(f"salt must be {SALT_LEN} bytes, got {len(self.salt)}")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.key_length != KEY_LEN:
            raise ValidationError(f"key_length must be {KEY_LEN}")


@dataclass(frozen=True)
class SharePair:
    """Two 32-byte escrow shares; XOR of the pair reconstructs the key.

    ``share_a`` is drawn uniformly at random, independent of the key, and
    ``share_b`` is the key masked by it. Either share alone is statistically
    uniform and carries no information about the key.
    """

    share_a: bytes
    share_b: bytes

    def __post_init__(self) -> None:
        for name, value in (("share_a", self.share_a), ("share_b", self.share_b)):
            if len(value) != KEY_LEN:
                raise ValidationError(f"{name} must be {KEY_LEN} bytes, got {len(value)}")


@dataclass(frozen=True)
class CiphertextEnvelope:
    """Parsed form of the on-disk encrypted-file format."""

    nonce: bytes
    body: bytes
    tag: bytes

    def __post_init__(self) -> None:
        if len(self.nonce) != NONCE_LEN:
            raise ValidationError(f"nonce must be {NONCE_LEN} bytes")
        if len(self.tag) != TAG_LEN:
            raise ValidationError(f"tag must be {TAG_LEN} bytes")

    def to_bytes(self) -> bytes:
        return (
            ENVELOPE_MAGIC
            + bytes([ENVELOPE_VERSION])
            + self.nonce
            + self.body
            + self.tag
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "CiphertextEnvelope":
        if len(data) < ENVELOPE_OVERHEAD:
            raise FormatError(
                f"envelope too short: {len(data)} bytes, need >= {ENVELOPE_OVERHEAD}"
            )
        if data[:4] != ENVELOPE_MAGIC:
            raise FormatError(f"bad envelope magic {data[:4]!r}")
        if data[4] != ENVELOPE_VERSION:
            raise FormatError(f"unsupported envelope version {data[4]:#x}")
        nonce = data[5:ENVELOPE_HEADER_LEN]
        body = data[ENVELOPE_HEADER_LEN:-TAG_LEN]
        tag = data[-TAG_LEN:]
        return cls(nonce=nonce, body=body, tag=tag)


def hash_stream(src: BinaryIO, chunk_size: int = DEFAULT_CHUNK_SIZE) -> Digest:
    """SHA-512 of a stream, reading at most ``chunk_size`` bytes at a time.

    The result is independent of the chunking: any chunk size yields the
    digest of the concatenated input.
    """
    hasher = hashlib.sha512()
    for chunk in iter_chunks(src, chunk_size):
        hasher.update(chunk)
    return Digest(hasher.digest())


def hash_bytes(data: bytes) -> Digest:
    return Digest(hashlib.sha512(data).digest())


def new_hasher():
    """Incremental SHA-512 hasher for callers that tee their own chunks."""
    return hashlib.sha512()


def generate_salt(rng: RandomSource = os.urandom) -> bytes:
    salt = rng(SALT_LEN)
    if len(salt) != SALT_LEN:
        raise ValidationError("random source returned wrong salt length")
    return salt


def derive_key(password: str, params: KdfParams) -> bytes:
    """Stretch a password and per-file salt into a 32-byte key.

    PBKDF2-HMAC-SHA512; deterministic in (password, salt, iterations).
    The password itself never leaves this process.
    """
    if not isinstance(password, str) or len(password) == 0:
        raise ValidationError("password must be a non-empty string")
    return hashlib.pbkdf2_hmac(
        "sha512",
        password.encode("utf-8"),
        params.salt,
        params.iterations,
        dklen=params.key_length,
    )


def _check_key(key: bytes) -> None:
    if len(key) != KEY_LEN:
        raise ValidationError(f"key must be {KEY_LEN} bytes, got {len(key)}")


class StreamEncryptor:
    """Incremental envelope encryption for callers that drive their own loop.

    A fresh random nonce is drawn at construction; if the random source
    fails, the error propagates before any ciphertext is produced (a nonce is
    never reused or zero-filled). Emit ``header``, then ``update`` the
    plaintext chunks, then append ``finalize()`` (the tag).

    Ciphertext is produced via ``update_into`` on a reused scratch buffer:
    allocating a fresh megabyte per chunk costs far more in page faults than
    the AES itself. Returned chunks are owned copies, safe to keep.
    """

    def __init__(self, key: bytes, rng: RandomSource = os.urandom,
                 chunk_size_hint: int = 0):
        _check_key(key)
        nonce = rng(NONCE_LEN)
        if len(nonce) != NONCE_LEN:
            raise ValidationError("random source returned wrong nonce length")
        self._encryptor = Cipher(algorithms.AES(key), modes.GCM(nonce)).encryptor()
        self.header = ENVELOPE_MAGIC + bytes([ENVELOPE_VERSION]) + nonce
        self._scratch = bytearray()
        if chunk_size_hint > 0:
            self._grow_scratch(chunk_size_hint + 16)

    def _grow_scratch(self, size: int) -> None:
        self._scratch = bytearray(size)
        # touch every page now so first-write faults don't land in the
        # cipher hot path
        for offset in range(0, size, 4096):
            self._scratch[offset] = 0

    def update(self, chunk: bytes) -> bytes:
        return bytes(self.update_view(chunk))

    def update_view(self, chunk: bytes) -> memoryview:
        """Like ``update`` but returns a view into the scratch buffer.

        Zero-copy for callers that hash or write the chunk immediately; the
        view is invalidated by the next ``update``/``update_view`` call.
        """
        if len(self._scratch) < len(chunk) + 16:
            self._grow_scratch(len(chunk) + 16)
        written = self._encryptor.update_into(chunk, self._scratch)
        return memoryview(self._scratch)[:written]

    def finalize(self) -> bytes:
        self._encryptor.finalize()
        return self._encryptor.tag


def encrypt_stream(
    src: BinaryIO,
    key: bytes,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    rng: RandomSource = os.urandom,
) -> Iterator[bytes]:
    """Encrypt a stream, yielding envelope bytes (header, body chunks, tag)."""
    encryptor = StreamEncryptor(key, rng=rng)
    yield encryptor.header
    for chunk in iter_chunks(src, chunk_size):
        out = encryptor.update(chunk)
        if out:
            yield out
    yield encryptor.finalize()


def encrypt(plaintext: bytes, key: bytes, rng: RandomSource = os.urandom) -> CiphertextEnvelope:
    """One-shot encryption; see ``encrypt_stream`` for the streaming form."""
    data = b"".join(encrypt_stream(io.BytesIO(plaintext), key, rng=rng))
    return CiphertextEnvelope.from_bytes(data)


def decrypt_stream(
    src: BinaryIO,
    key: bytes,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Iterator[bytes]:
    """Decrypt an envelope stream, yielding plaintext chunks.

    The authentication tag sits at the end of the envelope, so chunks yielded
    before the generator is exhausted are NOT yet authenticated. Callers must
    buffer to a private spool and release nothing until iteration completes
    without raising; ``decrypt`` and the engine download paths do exactly
    that.

    Raises:
        FormatError: malformed or truncated envelope.
        AuthenticationError: tag mismatch (wrong key or tampered data).
    """
    _check_key(key)
    header = src.read(ENVELOPE_HEADER_LEN)
    if len(header) != ENVELOPE_HEADER_LEN:
        raise FormatError("envelope truncated: incomplete header")
    if header[:4] != ENVELOPE_MAGIC:
        raise FormatError(f"bad envelope magic {header[:4]!r}")
    if header[4] != ENVELOPE_VERSION:
        raise FormatError(f"unsupported envelope version {header[4]:#x}")
    nonce = header[5:]

    decryptor = Cipher(algorithms.AES(key), modes.GCM(nonce)).decryptor()
    scratch = bytearray()
    held = b""
    while True:
        chunk = src.read(chunk_size)
        if not chunk:
            break
        held += chunk
        if len(held) > TAG_LEN:
            body, held = held[:-TAG_LEN], held[-TAG_LEN:]
            if len(scratch) < len(body) + 16:
                scratch = bytearray(len(body) + 16)
            written = decryptor.update_into(body, scratch)
            if written:
                yield bytes(memoryview(scratch)[:written])
    if len(held) != TAG_LEN:
        raise FormatError("envelope truncated: missing authentication tag")
    try:
        final = decryptor.finalize_with_tag(held)
    except InvalidTag as exc:
        raise AuthenticationError(
            "authentication failed: wrong key or tampered ciphertext"
        ) from exc
    if final:
        yield final


def decrypt(envelope: CiphertextEnvelope | bytes, key: bytes) -> bytes:
    """One-shot decryption. Returns plaintext only if the tag verifies."""
    data = envelope.to_bytes() if isinstance(envelope, CiphertextEnvelope) else envelope
    return b"".join(decrypt_stream(io.BytesIO(data), key))


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValidationError(f"length mismatch: {len(a)} vs {len(b)}")
    return bytes(x ^ y for x, y in zip(a, b))


def split_key(key: bytes, rng: RandomSource = os.urandom) -> SharePair:
    """Split a key into two independently-uniform escrow shares."""
    _check_key(key)
    share_a = rng(KEY_LEN)
    if len(share_a) != KEY_LEN:
        raise ValidationError("random source returned wrong share length")
    return SharePair(share_a=share_a, share_b=xor_bytes(share_a, key))


def combine_shares(share_a: bytes, share_b: bytes) -> bytes:
    """Reconstruct the key from its two escrow shares."""
    if len(share_a) != KEY_LEN or len(share_b) != KEY_LEN:
        raise ValidationError(f"shares must each be {KEY_LEN} bytes")
    return xor_bytes(share_a, share_b)
