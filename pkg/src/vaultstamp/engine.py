"""Protocol orchestration: upload, download (password or escrow shares),
verify, and anchor flushing, wired over the repository, record store, and
anchor manager.

Confidentiality boundary: passwords and keys exist only inside this module
and ``crypto``; the repository sees envelope bytes and labels, the record
store sees salts and digests, the anchor provider sees combined hashes.
Plaintext bytes reach only the hash/encrypt pipeline and the caller.

Upload processes each file in a single read pass: plaintext hashing,
encryption, and ciphertext hashing advance chunk-synchronized while the
envelope streams straight into the repository, so memory stays bounded by
the chunk size regardless of file size and the digests equal what separate
sequential passes would produce.
"""

from __future__ import annotations

import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import BinaryIO, Iterator, Sequence

from . import failpoints
from .anchors import AnchorManager, FlushResult, utc_now_iso
from .crypto import (
    DEFAULT_KDF_ITERATIONS,
    Digest,
    KdfParams,
    SharePair,
    StreamEncryptor,
    combine_shares,
    decrypt_stream,
    derive_key,
    generate_salt,
    hash_stream,
    new_hasher,
    split_key,
)
from .errors import (
    AuthenticationError,
    IntegrityAlarmError,
    ValidationError,
)
from .provenance import file_combined_hash
from .records import FileRecord, RecordStore
from .repository import DatasetRef, StoredFileRef
from .streams import DEFAULT_CHUNK_SIZE, CountingReader, IterReader, iter_chunks

logger = logging.getLogger(__name__)

CHECK_PASS = "pass"
CHECK_FAIL = "fail"
CHECK_PENDING = "pending"
CHECK_UNVERIFIABLE = "unverifiable_without_plaintext"

RECEIPT_STATE_ANCHORED = "anchored"
RECEIPT_STATE_PENDING = "pending"

# Spool this much plaintext in memory before falling back to a temp file
# during downloads (plaintext is never released before full verification).
_SPOOL_MAX = 32 * 1024 * 1024


class TimingCollector:
    """Accumulates wall-clock seconds per pipeline stage label.

    Safe to share across concurrent file uploads within one batch.
    """

    def __init__(self):
        self.seconds: dict[str, float] = {}
        self._lock = threading.Lock()

    @contextmanager
    def section(self, label: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(label, time.perf_counter() - start)

    def add(self, label: str, seconds: float) -> None:
        with self._lock:
            self.seconds[label] = self.seconds.get(label, 0.0) + seconds

    def sum(self, labels: Sequence[str]) -> float:
        return sum(self.seconds.get(label, 0.0) for label in labels)


_PIPELINE_LABELS = ("plaintext_hash", "encrypt", "ciphertext_hash")


@dataclass(frozen=True)
class UploadResult:
    """Outcome of one upload call; ``shares`` maps file_id to its escrow pair.

    Shares are returned once and never persisted anywhere by the engine.
    ``failures`` lists (label, error message) for files that were rolled
    back; successful files are unaffected by a sibling's failure.
    """

    refs: tuple[tuple[StoredFileRef, FileRecord], ...]
    shares: dict[str, SharePair] | None
    receipt_state: str
    failures: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class VerifyReport:
    """Per-check verdicts for one archived file.

    ``anchor_check`` ties the anchored digest to the combined hash rebuilt
    from the record's plaintext digest and the *recomputed* ciphertext
    digest, so envelope tampering fails it even though the record is intact.
    ``combined_hash_check`` is the full-content recomputation; without the
    plaintext it is reported as unverifiable rather than failed.
    """

    file_id: str
    ciphertext_check: str
    combined_hash_check: str
    anchor_check: str
    plaintext_check: str | None
    record: FileRecord
    ciphertext_digest_actual: Digest
    plaintext_digest_actual: Digest | None
    combined_hash_value: Digest

    @property
    def failed(self) -> bool:
        checks = [self.ciphertext_check, self.combined_hash_check, self.anchor_check]
        if self.plaintext_check is not None:
            checks.append(self.plaintext_check)
        return CHECK_FAIL in checks

    @property
    def pending(self) -> bool:
        return self.anchor_check == CHECK_PENDING

    def to_json_obj(self) -> dict:
        return {
            "file_id": self.file_id,
            "ciphertext_check": self.ciphertext_check,
            "combined_hash_check": self.combined_hash_check,
            "anchor_check": self.anchor_check,
            "plaintext_check": self.plaintext_check,
            "ciphertext_digest_actual": self.ciphertext_digest_actual.hex(),
            "plaintext_digest_actual": (
                self.plaintext_digest_actual.hex()
                if self.plaintext_digest_actual
                else None
            ),
            "combined_hash_value": self.combined_hash_value.hex(),
            "record": self.record.to_json_obj(),
        }


class ArchiveEngine:
    """One archive: a repository, a record store, and an anchor manager."""

    def __init__(
        self,
        repository,
        records: RecordStore,
        anchor_manager: AnchorManager,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        upload_workers: int = 1,
        kdf_iterations: int = DEFAULT_KDF_ITERATIONS,
        rng=os.urandom,
        clock=utc_now_iso,
    ):
        if upload_workers < 1:
            raise ValidationError("upload_workers must be >= 1")
        self.repository = repository
        self.records = records
        self.anchors = anchor_manager
        self.chunk_size = chunk_size
        self.upload_workers = upload_workers
        self.kdf_iterations = kdf_iterations
        self._rng = rng
        self._clock = clock
        # Serializes record-store writes and anchor submissions; file
        # pipelines themselves may run concurrently up to upload_workers.
        self._write_lock = threading.Lock()

    # -- upload -----------------------------------------------------------

    def upload(
        self,
        dataset: DatasetRef,
        files: Sequence[tuple[str, BinaryIO]],
        password: str,
        escrow: bool = False,
        timings: TimingCollector | None = None,
    ) -> UploadResult:
        """Encrypt, store, record, and anchor a batch of files.

        Each file gets a fresh random salt (hence its own key) even though
        the password is shared across the batch. A file that fails is rolled
        back (stored envelope removed, no record) without disturbing the
        others. An unreachable anchor provider does not fail the upload; the
        affected records stay pending until a flush succeeds.
        """
        if not files:
            raise ValidationError("upload requires at least one file")
        if not isinstance(password, str) or not password:
            raise ValidationError("password must be a non-empty string")

        results: list[tuple[StoredFileRef, FileRecord, SharePair | None] | None]
        failures: list[tuple[str, str]] = []

        def run_one(item: tuple[str, BinaryIO]):
            label, stream = item
            return self._upload_one(
                dataset, label, stream, password, escrow,
                timings or TimingCollector(),
            )

        if self.upload_workers == 1 or len(files) == 1:
            results = []
            for label, stream in files:
                try:
                    results.append(run_one((label, stream)))
                except Exception as exc:  # per-file isolation
                    logger.warning("upload of %r failed: %s", label, exc)
                    failures.append((label, str(exc)))
                    results.append(None)
        else:
            results = [None] * len(files)
            with ThreadPoolExecutor(max_workers=self.upload_workers) as pool:
                futures = {pool.submit(run_one, item): i for i, item in enumerate(files)}
                for future, index in futures.items():
                    try:
                        results[index] = future.result()
                    except Exception as exc:
                        label = files[index][0]
                        logger.warning("upload of %r failed: %s", label, exc)
                        failures.append((label, str(exc)))

        refs = []
        shares: dict[str, SharePair] = {}
        all_anchored = True
        for entry in results:
            if entry is None:
                continue
            ref, record, pair = entry
            refs.append((ref, record))
            if pair is not None:
                shares[record.file_id] = pair
            if record.receipt is None:
                all_anchored = False
        return UploadResult(
            refs=tuple(refs),
            shares=shares if escrow else None,
            receipt_state=RECEIPT_STATE_ANCHORED if all_anchored else RECEIPT_STATE_PENDING,
            failures=tuple(failures),
        )

    def _upload_one(
        self,
        dataset: DatasetRef,
        label: str,
        stream: BinaryIO,
        password: str,
        escrow: bool,
        timings: TimingCollector,
    ) -> tuple[StoredFileRef, FileRecord, SharePair | None]:
        with timings.section("key_gen"):
            salt = generate_salt(self._rng)
            kdf = KdfParams(salt=salt, iterations=self.kdf_iterations)
            key = derive_key(password, kdf)

        pt_hasher = new_hasher()
        ct_hasher = new_hasher()

        def envelope_chunks() -> Iterator[bytes]:
            encryptor = StreamEncryptor(
                key, rng=self._rng, chunk_size_hint=self.chunk_size
            )
            with timings.section("ciphertext_hash"):
                ct_hasher.update(encryptor.header)
            yield encryptor.header
            for chunk in iter_chunks(stream, self.chunk_size):
                with timings.section("plaintext_hash"):
                    pt_hasher.update(chunk)
                with timings.section("encrypt"):
                    body_view = encryptor.update_view(chunk)
                if body_view:
                    with timings.section("ciphertext_hash"):
                        ct_hasher.update(body_view)
                    # owning copy for the transport layer: the view dies on
                    # the next encryptor call (copy cost belongs to store)
                    yield bytes(body_view)
            with timings.section("encrypt"):
                tag = encryptor.finalize()
            with timings.section("ciphertext_hash"):
                ct_hasher.update(tag)
            yield tag

        pipeline_before = timings.sum(_PIPELINE_LABELS)
        store_start = time.perf_counter()
        ref = self.repository.store(dataset, label, IterReader(envelope_chunks()))
        store_elapsed = time.perf_counter() - store_start
        # The pipeline stages above run inside the store() call; attribute
        # only the residual (writes, transfer, reads) to the store bucket.
        timings.add(
            "store",
            max(0.0, store_elapsed - (timings.sum(_PIPELINE_LABELS) - pipeline_before)),
        )
        failpoints.check("after_store")

        pt_digest = Digest(pt_hasher.digest())
        ct_digest = Digest(ct_hasher.digest())
        record = FileRecord(
            file_id=ref.file_id,
            label=label,
            created_utc=self._clock(),
            kdf=kdf,
            plaintext_digest=pt_digest,
            ciphertext_digest=ct_digest,
            receipt=None,
        )
        try:
            with timings.section("record_put"):
                with self._write_lock:
                    self.records.put(record)
        except Exception:
            # Roll this file back: no record may point at it and no orphan
            # envelope may stay visible.
            try:
                self.repository.delete(ref.file_id)
            except Exception:
                logger.exception("rollback delete failed for %s", ref.file_id)
            raise
        failpoints.check("after_record_put")

        with self._write_lock:
            receipt = self.anchors.anchor_file(ref.file_id, pt_digest, ct_digest)
        failpoints.check("before_attach_receipt")
        if receipt is not None:
            with self._write_lock:
                self.records.attach_receipt(ref.file_id, receipt)
            record = replace(record, receipt=receipt)

        pair = split_key(key, rng=self._rng) if escrow else None
        return ref, record, pair

    # -- download ---------------------------------------------------------

    def download_with_password(self, file_id: str, password: str) -> BinaryIO:
        """Decrypt an archived file with its password.

        Returns a readable, fully verified plaintext stream (seeked to 0).
        Nothing is returned unless the AEAD tag verifies AND the recomputed
        plaintext and ciphertext digests match the record.
        """
        record = self.records.get(file_id)
        key = derive_key(password, record.kdf)
        return self._download_checked(record, key)

    def download_with_shares(
        self, file_id: str, share_a: bytes, share_b: bytes
    ) -> BinaryIO:
        """Decrypt an archived file by recombining its two escrow shares."""
        record = self.records.get(file_id)
        key = combine_shares(share_a, share_b)
        return self._download_checked(record, key)

    def _download_checked(self, record: FileRecord, key: bytes) -> BinaryIO:
        src = self.repository.fetch(record.file_id)
        ct_hasher = new_hasher()
        pt_hasher = new_hasher()
        counted = CountingReader(src, on_chunk=ct_hasher.update)
        spool = tempfile.SpooledTemporaryFile(max_size=_SPOOL_MAX)
        try:
            try:
                for chunk in decrypt_stream(counted, key, self.chunk_size):
                    pt_hasher.update(chunk)
                    spool.write(chunk)
            except AuthenticationError:
                # Distinguish "stored file does not match its record" from
                # "wrong credentials": the former is an integrity alarm.
                if Digest(ct_hasher.digest()) != record.ciphertext_digest:
                    raise IntegrityAlarmError(
                        f"stored envelope for {record.file_id!r} does not match "
                        "the recorded ciphertext digest"
                    ) from None
                raise
            if Digest(ct_hasher.digest()) != record.ciphertext_digest:
                raise IntegrityAlarmError(
                    f"recomputed ciphertext digest for {record.file_id!r} "
                    "disagrees with the record"
                )
            if Digest(pt_hasher.digest()) != record.plaintext_digest:
                raise IntegrityAlarmError(
                    f"recomputed plaintext digest for {record.file_id!r} "
                    "disagrees with the record"
                )
        except BaseException:
            spool.close()
            raise
        finally:
            src.close()
        spool.seek(0)
        return spool

    # -- verify -----------------------------------------------------------

    def verify(self, file_id: str, plaintext: BinaryIO | None = None) -> VerifyReport:
        """Auditor-side checks; needs no password or key material.

        Without the plaintext the report can still pin the stored envelope
        to the record and the record to the anchored digest; the plaintext
        component of the combined hash remains taken on trust, so
        ``combined_hash_check`` reports unverifiable rather than pass.
        """
        record = self.records.get(file_id)
        src = self.repository.fetch(file_id)
        try:
            ct_actual = hash_stream(src, self.chunk_size)
        finally:
            src.close()
        ciphertext_check = (
            CHECK_PASS if ct_actual == record.ciphertext_digest else CHECK_FAIL
        )

        pt_actual: Digest | None = None
        plaintext_check: str | None = None
        if plaintext is not None:
            pt_actual = hash_stream(plaintext, self.chunk_size)
            plaintext_check = (
                CHECK_PASS if pt_actual == record.plaintext_digest else CHECK_FAIL
            )

        # Combined hash as anchored: record's plaintext digest (all an
        # auditor has) + the ciphertext digest recomputed from storage.
        h_anchor = file_combined_hash(record.plaintext_digest, ct_actual)
        if record.receipt is None:
            anchor_check = CHECK_PENDING
        else:
            anchor_check = (
                CHECK_PASS
                if self.anchors.verify_receipt(record.receipt, h_anchor)
                else CHECK_FAIL
            )

        if plaintext is None:
            combined_check = CHECK_UNVERIFIABLE
        else:
            h_content = file_combined_hash(pt_actual, ct_actual)
            if record.receipt is None:
                # No anchor yet; check content against the record instead.
                ok = h_content == file_combined_hash(
                    record.plaintext_digest, record.ciphertext_digest
                )
            else:
                ok = self.anchors.verify_receipt(record.receipt, h_content)
            combined_check = CHECK_PASS if ok else CHECK_FAIL

        return VerifyReport(
            file_id=file_id,
            ciphertext_check=ciphertext_check,
            combined_hash_check=combined_check,
            anchor_check=anchor_check,
            plaintext_check=plaintext_check,
            record=record,
            ciphertext_digest_actual=ct_actual,
            plaintext_digest_actual=pt_actual,
            combined_hash_value=h_anchor,
        )

    # -- anchoring --------------------------------------------------------

    def flush_anchors(self, requeue: bool = True) -> FlushResult:
        """Drain the pending anchor queue and attach the receipts.

        With ``requeue`` (the default), records stuck pending without a
        queue entry (e.g. after a crash between submission and attachment)
        are re-enqueued first, making flush self-healing; the provider may
        then see a digest twice, which append-only anchoring permits.
        """
        with self._write_lock:
            if requeue:
                queued = {entry.file_id for entry in self.anchors.pending()}
                for record in self.records.records():
                    if record.receipt is None and record.file_id not in queued:
                        self.anchors.enqueue(
                            record.file_id,
                            record.plaintext_digest,
                            record.ciphertext_digest,
                        )
            result = self.anchors.flush()
            for file_id, receipt in result.per_file.items():
                try:
                    self.records.attach_receipt(file_id, receipt)
                except Exception as exc:
                    logger.warning("could not attach receipt to %s: %s", file_id, exc)
        return result
