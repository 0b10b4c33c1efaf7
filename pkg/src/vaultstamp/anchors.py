"""Timestamp anchoring: submit a digest, get back a verifiable receipt.

Two providers sit behind one interface. The local provider appends to a
tamper-evident hash-chained ledger file; the remote provider speaks a minimal
two-endpoint HTTP contract (``POST /hashes`` -> ``{"link": ...}``,
``GET /proofs/{id}`` -> ``{"digest": ..., "timestamp": ...}``) so that any
notarisation service exposing "upload a hash, fetch its proof" can slot in.

An ``AnchorManager`` layers the anchoring policy on top of a provider:

* ``immediate``     - each file's combined hash is anchored at upload time.
* ``concat_batch``  - queued digest pairs are concatenated (hex, delimited)
                      and hashed into one batch digest at flush time.
* ``merkle_batch``  - queued per-file combined hashes become Merkle leaves;
                      only the root is anchored, and each receipt carries an
                      inclusion proof.

Digests queued for batching (or stranded by a provider outage) are persisted,
so a restart never loses a pending anchor.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable

import requests

from . import failpoints
from .crypto import Digest, hash_bytes
from .errors import (
    AnchorUnavailableError,
    FormatError,
    LedgerCorruptionError,
    ValidationError,
)
from .provenance import (
    MerkleProof,
    MerkleTree,
    combined_hash,
    file_combined_hash,
    merkle_verify,
)
from .streams import repair_torn_tail

logger = logging.getLogger(__name__)

MODE_IMMEDIATE = "immediate"
MODE_CONCAT_BATCH = "concat_batch"
MODE_MERKLE_BATCH = "merkle_batch"
ANCHOR_MODES = (MODE_IMMEDIATE, MODE_CONCAT_BATCH, MODE_MERKLE_BATCH)

LEDGER_GENESIS = bytes(64)

Clock = Callable[[], str]


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds").replace(
        "+00:00", "Z"
    )


@dataclass(frozen=True)
class MerkleBatchContext:
    """Receipt context when the anchored digest is a Merkle batch root."""

    root: Digest
    proof: MerkleProof


@dataclass(frozen=True)
class ConcatBatchContext:
    """Receipt context when the anchored digest is a concatenated batch hash.

    The full ordered pair list is embedded because, unlike a Merkle proof,
    the concatenation formula cannot be verified for one member without all
    constituent digests.
    """

    pairs: tuple[tuple[Digest, Digest], ...]
    index: int


BatchContext = MerkleBatchContext | ConcatBatchContext


@dataclass(frozen=True)
class AnchorReceipt:
    """Proof handle returned by a timestamp provider."""

    verification_link: str
    anchored_digest: Digest
    timestamp_utc: str
    provider_id: str
    batch_context: BatchContext | None = None

    def to_json_obj(self) -> dict:
        batch: dict | None = None
        ctx = self.batch_context
        if isinstance(ctx, MerkleBatchContext):
            batch = {
                "kind": "merkle",
                "root": ctx.root.hex(),
                "proof": {
                    "leaf_index": ctx.proof.leaf_index,
                    "siblings": [[side, d.hex()] for d, side in ctx.proof.siblings],
                },
            }
        elif isinstance(ctx, ConcatBatchContext):
            batch = {
                "kind": "concat",
                "index": ctx.index,
                "pairs": [[m.hex(), c.hex()] for m, c in ctx.pairs],
            }
        return {
            "link": self.verification_link,
            "anchored_digest": self.anchored_digest.hex(),
            "timestamp_utc": self.timestamp_utc,
            "provider_id": self.provider_id,
            "batch": batch,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json_obj(cls, obj: dict) -> "AnchorReceipt":
        try:
            batch = obj.get("batch")
            ctx: BatchContext | None = None
            if batch is not None:
                if batch["kind"] == "merkle":
                    proof = MerkleProof(
                        leaf_index=int(batch["proof"]["leaf_index"]),
                        siblings=tuple(
                            (Digest.from_hex(d), side)
                            for side, d in batch["proof"]["siblings"]
                        ),
                    )
                    ctx = MerkleBatchContext(
                        root=Digest.from_hex(batch["root"]), proof=proof
                    )
                elif batch["kind"] == "concat":
                    ctx = ConcatBatchContext(
                        pairs=tuple(
                            (Digest.from_hex(m), Digest.from_hex(c))
                            for m, c in batch["pairs"]
                        ),
                        index=int(batch["index"]),
                    )
                else:
                    raise FormatError(f"unknown batch context kind {batch['kind']!r}")
            return cls(
                verification_link=obj["link"],
                anchored_digest=Digest.from_hex(obj["anchored_digest"]),
                timestamp_utc=obj["timestamp_utc"],
                provider_id=obj["provider_id"],
                batch_context=ctx,
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed receipt object: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "AnchorReceipt":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"receipt is not valid JSON: {exc}") from exc
        return cls.from_json_obj(obj)


@dataclass(frozen=True)
class LedgerAudit:
    ok: bool
    entries: int
    first_bad_seq: int | None = None
    detail: str = ""


def _chain_value(prev_chain: bytes, digest: Digest, timestamp_utc: str) -> Digest:
    return hash_bytes(prev_chain + digest + timestamp_utc.encode("utf-8"))


class LocalLedgerProvider:
    """Append-only hash-chained ledger standing in for an external notary.

    File format: one entry per line, tab-separated::

        seq \\t timestamp_utc \\t digest_hex \\t chain_hex

    where ``chain = SHA512(prev_chain || digest || timestamp_utf8)`` and the
    genesis ``prev_chain`` is 64 zero bytes. Any retroactive edit breaks the
    chain replay; a deleted line breaks the dense sequence numbering.
    """

    provider_id = "local"

    def __init__(self, path: str | os.PathLike, clock: Clock = utc_now_iso):
        self.path = str(path)
        self._clock = clock
        self._lock = threading.Lock()
        parent = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(parent, exist_ok=True)
        repair_torn_tail(self.path)
        self._next_seq, self._prev_chain, self._prev_ts = self._replay_tail()

    def _read_lines(self) -> list[str]:
        if not os.path.exists(self.path):
            return []
        with open(self.path, "r", encoding="utf-8") as fh:
            raw = fh.read()
        lines = raw.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        elif lines:
            # Trailing bytes without a newline: a torn final write from a
            # crash. The entry was never durably appended; ignore it.
            lines.pop()
        return lines

    def _replay_tail(self) -> tuple[int, bytes, str]:
        seq, chain, ts = 0, LEDGER_GENESIS, ""
        for line in self._read_lines():
            fields = line.split("\t")
            if len(fields) != 4:
                raise LedgerCorruptionError(f"malformed ledger line: {line!r}")
            seq = int(fields[0]) + 1
            ts = fields[1]
            chain = bytes.fromhex(fields[3])
        return seq, chain, ts

    def submit(self, digest: bytes) -> AnchorReceipt:
        digest = Digest(digest)
        with self._lock:
            seq = self._next_seq
            now = self._clock()
            ts = max(now, self._prev_ts)  # keep timestamps non-decreasing in seq
            chain = _chain_value(self._prev_chain, digest, ts)
            line = f"{seq}\t{ts}\t{digest.hex()}\t{chain.hex()}\n".encode("utf-8")
            with open(self.path, "ab") as fh:
                fh.write(line[:16])
                failpoints.check("ledger_torn_write")
                fh.write(line[16:])
                fh.flush()
                os.fsync(fh.fileno())
            self._next_seq = seq + 1
            self._prev_chain = chain
            self._prev_ts = ts
        return AnchorReceipt(
            verification_link=f"local://ledger/{seq}",
            anchored_digest=digest,
            timestamp_utc=ts,
            provider_id=self.provider_id,
        )

    def resolve(self, link: str) -> tuple[Digest, str] | None:
        """Look up the (digest, timestamp) recorded under a verification link."""
        prefix = "local://ledger/"
        if not link.startswith(prefix):
            return None
        try:
            seq = int(link[len(prefix):])
        except ValueError:
            return None
        for line in self._read_lines():
            fields = line.split("\t")
            if len(fields) == 4 and fields[0] == str(seq):
                return Digest.from_hex(fields[2]), fields[1]
        return None

    def audit(self) -> LedgerAudit:
        """Replay the full hash chain from genesis and check seq density."""
        chain = LEDGER_GENESIS
        prev_ts = ""
        count = 0
        for expected_seq, line in enumerate(self._read_lines()):
            fields = line.split("\t")
            if len(fields) != 4:
                return LedgerAudit(False, count, expected_seq, "malformed line")
            try:
                seq = int(fields[0])
                ts = fields[1]
                digest = Digest.from_hex(fields[2])
                recorded_chain = Digest.from_hex(fields[3])
            except (ValueError, ValidationError):
                return LedgerAudit(False, count, expected_seq, "unparseable fields")
            if seq != expected_seq:
                return LedgerAudit(
                    False, count, expected_seq, f"sequence gap: found seq {seq}"
                )
            if ts < prev_ts:
                return LedgerAudit(False, count, seq, "timestamp regression")
            expected_chain = _chain_value(chain, digest, ts)
            if recorded_chain != expected_chain:
                return LedgerAudit(False, count, seq, "hash chain mismatch")
            chain = expected_chain
            prev_ts = ts
            count += 1
        return LedgerAudit(True, count)


class RemoteAnchorProvider:
    """HTTP client for a notarisation service.

    Wire contract: ``POST {base}/hashes`` with JSON ``{"digest": "<hex>"}``
    returns ``{"link": "...", "timestamp": "..."}``; the trailing path segment
    of the link is the proof id, fetchable via ``GET {base}/proofs/{id}`` as
    ``{"digest": "<hex>", "timestamp": "..."}``.

    Transient failures (connection errors, 5xx) are retried with backoff;
    exhausting the attempts raises ``AnchorUnavailableError`` so the caller
    can park the digest in the pending queue instead of failing the upload.
    """

    def __init__(
        self,
        base_url: str,
        max_attempts: int = 3,
        retry_delay: float = 0.2,
        timeout: float = 10.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.provider_id = f"remote:{self.base_url}"
        self.max_attempts = max_attempts
        self.retry_delay = retry_delay
        self.timeout = timeout
        self._session = session or requests.Session()

    def _post_with_retries(self, url: str, payload: dict) -> requests.Response:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.retry_delay * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = AnchorUnavailableError(
                    f"provider returned {resp.status_code}"
                )
                continue
            return resp
        raise AnchorUnavailableError(
            f"anchor provider unreachable after {self.max_attempts} attempts: {last_error}"
        )

    def submit(self, digest: bytes) -> AnchorReceipt:
        digest = Digest(digest)
        resp = self._post_with_retries(
            f"{self.base_url}/hashes", {"digest": digest.hex()}
        )
        if resp.status_code != 200:
            raise AnchorUnavailableError(
                f"provider rejected submission: {resp.status_code} {resp.text[:200]}"
            )
        body = resp.json()
        return AnchorReceipt(
            verification_link=body["link"],
            anchored_digest=digest,
            timestamp_utc=body.get("timestamp", utc_now_iso()),
            provider_id=self.provider_id,
        )

    def resolve(self, link: str) -> tuple[Digest, str] | None:
        proof_id = link.rstrip("/").rsplit("/", 1)[-1]
        try:
            resp = self._session.get(
                f"{self.base_url}/proofs/{proof_id}", timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise AnchorUnavailableError(f"provider unreachable: {exc}") from exc
        if resp.status_code == 404:
            return None
        if resp.status_code != 200:
            raise AnchorUnavailableError(
                f"provider returned {resp.status_code} for proof lookup"
            )
        body = resp.json()
        return Digest.from_hex(body["digest"]), body.get("timestamp", "")


def verify_receipt(provider, receipt: AnchorReceipt, expected: bytes) -> bool:
    """Check a receipt against the digest the caller believes was anchored.

    ``expected`` is the per-file combined hash. For a plain receipt it must
    equal the anchored digest; for a Merkle batch it must fold through the
    embedded proof to the anchored root; for a concat batch it must match the
    pair recorded at the receipt's index, with the whole pair list hashing to
    the anchored digest. In every case the provider's stored entry for the
    verification link must agree with the receipt.
    """
    try:
        expected = Digest(expected)
    except ValidationError:
        return False
    resolved = provider.resolve(receipt.verification_link)
    if resolved is None:
        logger.warning("verification link %r not known to provider", receipt.verification_link)
        return False
    anchored, _ts = resolved
    if anchored != receipt.anchored_digest:
        logger.warning("provider digest disagrees with receipt for %r", receipt.verification_link)
        return False
    ctx = receipt.batch_context
    if ctx is None:
        return expected == anchored
    if isinstance(ctx, MerkleBatchContext):
        return ctx.root == anchored and merkle_verify(expected, ctx.proof, ctx.root)
    if isinstance(ctx, ConcatBatchContext):
        if not 0 <= ctx.index < len(ctx.pairs):
            return False
        if combined_hash(ctx.pairs).value != anchored:
            return False
        pt, ct = ctx.pairs[ctx.index]
        return file_combined_hash(pt, ct) == expected
    return False


@dataclass(frozen=True)
class QueuedDigest:
    file_id: str
    plaintext_digest: Digest
    ciphertext_digest: Digest


class PendingQueue:
    """Durable FIFO of digest pairs awaiting anchoring.

    One tab-separated line per entry: ``file_id, plaintext hex, ciphertext
    hex``. Appends are fsynced; a torn trailing line from a crash is ignored
    on reload.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = str(path)
        parent = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(parent, exist_ok=True)
        repair_torn_tail(self.path)

    def append(self, entry: QueuedDigest) -> None:
        line = (
            f"{entry.file_id}\t{entry.plaintext_digest.hex()}"
            f"\t{entry.ciphertext_digest.hex()}\n"
        )
        with open(self.path, "ab") as fh:
            fh.write(line.encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())

    def entries(self) -> list[QueuedDigest]:
        if not os.path.exists(self.path):
            return []
        with open(self.path, "r", encoding="utf-8") as fh:
            raw = fh.read()
        lines = raw.split("\n")
        if lines and lines[-1] != "":
            lines.pop()  # torn trailing write
        out = []
        for line in lines:
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                continue
            out.append(
                QueuedDigest(
                    file_id=fields[0],
                    plaintext_digest=Digest.from_hex(fields[1]),
                    ciphertext_digest=Digest.from_hex(fields[2]),
                )
            )
        return out

    def clear(self) -> None:
        tmp = self.path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)


@dataclass(frozen=True)
class FlushResult:
    """Outcome of draining the pending queue.

    ``flushed == 0`` with empty ``per_file`` is the distinguishable no-op.
    ``batch_receipt`` is set only in the batch modes (one submission for the
    whole queue).
    """

    flushed: int
    per_file: dict[str, AnchorReceipt]
    batch_receipt: AnchorReceipt | None = None


class AnchorManager:
    """Anchoring policy (mode + pending queue) over a single provider."""

    def __init__(
        self,
        provider,
        mode: str = MODE_IMMEDIATE,
        queue_path: str | os.PathLike | None = None,
    ):
        if mode not in ANCHOR_MODES:
            raise ValidationError(f"unknown anchor mode {mode!r}")
        self.provider = provider
        self.mode = mode
        self._lock = threading.Lock()
        self._queue = PendingQueue(queue_path) if queue_path else _MemoryQueue()

    def anchor_file(
        self, file_id: str, plaintext_digest: bytes, ciphertext_digest: bytes
    ) -> AnchorReceipt | None:
        """Anchor one file's digest pair, or queue it; None means pending.

        The pair is persisted to the queue before any submission attempt, so
        a crash or provider outage can only delay the anchor, never lose it.
        """
        entry = QueuedDigest(
            file_id=file_id,
            plaintext_digest=Digest(plaintext_digest),
            ciphertext_digest=Digest(ciphertext_digest),
        )
        with self._lock:
            self._queue.append(entry)
            if self.mode != MODE_IMMEDIATE:
                return None
            try:
                result = self._flush_locked()
            except AnchorUnavailableError:
                logger.warning("anchor provider unavailable; %s left pending", file_id)
                return None
            return result.per_file.get(file_id)

    def enqueue(
        self, file_id: str, plaintext_digest: bytes, ciphertext_digest: bytes
    ) -> None:
        """Queue a digest pair without attempting submission (used to requeue
        records stranded pending by a crash or outage)."""
        with self._lock:
            self._queue.append(
                QueuedDigest(
                    file_id=file_id,
                    plaintext_digest=Digest(plaintext_digest),
                    ciphertext_digest=Digest(ciphertext_digest),
                )
            )

    def flush(self) -> FlushResult:
        """Drain the pending queue per the configured mode."""
        with self._lock:
            return self._flush_locked()

    def _flush_locked(self) -> FlushResult:
        entries = self._queue.entries()
        if not entries:
            return FlushResult(flushed=0, per_file={})
        per_file: dict[str, AnchorReceipt] = {}
        batch_receipt: AnchorReceipt | None = None

        if self.mode == MODE_MERKLE_BATCH:
            leaves = [
                file_combined_hash(e.plaintext_digest, e.ciphertext_digest)
                for e in entries
            ]
            tree = MerkleTree(leaves)
            batch_receipt = self.provider.submit(tree.root)
            for i, entry in enumerate(entries):
                per_file[entry.file_id] = AnchorReceipt(
                    verification_link=batch_receipt.verification_link,
                    anchored_digest=batch_receipt.anchored_digest,
                    timestamp_utc=batch_receipt.timestamp_utc,
                    provider_id=batch_receipt.provider_id,
                    batch_context=MerkleBatchContext(root=tree.root, proof=tree.prove(i)),
                )
        elif self.mode == MODE_CONCAT_BATCH:
            pairs = tuple(
                (e.plaintext_digest, e.ciphertext_digest) for e in entries
            )
            batch_digest = combined_hash(pairs).value
            batch_receipt = self.provider.submit(batch_digest)
            for i, entry in enumerate(entries):
                per_file[entry.file_id] = AnchorReceipt(
                    verification_link=batch_receipt.verification_link,
                    anchored_digest=batch_receipt.anchored_digest,
                    timestamp_utc=batch_receipt.timestamp_utc,
                    provider_id=batch_receipt.provider_id,
                    batch_context=ConcatBatchContext(pairs=pairs, index=i),
                )
        else:  # immediate: queued entries are retried digests, one receipt each
            for entry in entries:
                digest = file_combined_hash(
                    entry.plaintext_digest, entry.ciphertext_digest
                )
                per_file[entry.file_id] = self.provider.submit(digest)

        self._queue.clear()
        return FlushResult(
            flushed=len(entries), per_file=per_file, batch_receipt=batch_receipt
        )

    def pending(self) -> list[QueuedDigest]:
        return self._queue.entries()

    def verify_receipt(self, receipt: AnchorReceipt, expected: bytes) -> bool:
        return verify_receipt(self.provider, receipt, expected)


class _MemoryQueue:
    """Queue fallback when no path is configured (tests, throwaway engines)."""

    def __init__(self):
        self._entries: list[QueuedDigest] = []

    def append(self, entry: QueuedDigest) -> None:
        self._entries.append(entry)

    def entries(self) -> list[QueuedDigest]:
        return list(self._entries)

    def clear(self) -> None:
        self._entries.clear()
