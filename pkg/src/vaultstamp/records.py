"""Durable per-file records: repository file ids, salts, digests, receipts.

This is the metadata database of the system. It never holds file content,
passwords, keys, or shares; losing it makes password-based decryption
impossible (the salts live here, not in the envelopes), which is why the CLI
ships an export command.

Persistence is an append-only log, one operation per line, replayed into an
in-memory index at startup. The only mutation a record ever sees is the
one-time pending -> anchored receipt transition, appended as its own line::

    PUT \t file_id \t created_utc \t label \t salt_hex \t iterations \t
        plaintext_digest_hex \t ciphertext_digest_hex \t receipt_json|PENDING
    RECEIPT \t file_id \t receipt_json

A torn trailing line (crash mid-append) is ignored on replay; a malformed
line anywhere else is treated as corruption and refuses to load.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, replace
from typing import Iterator, TextIO

from . import failpoints
from .anchors import AnchorReceipt
from .crypto import Digest, KdfParams
from .errors import ConflictError, FormatError, NotFoundError, ValidationError
from .streams import repair_torn_tail

PENDING = "PENDING"


@dataclass(frozen=True)
class FileRecord:
    """One archived file's metadata. ``receipt is None`` means anchor pending."""

    file_id: str
    label: str
    created_utc: str
    kdf: KdfParams
    plaintext_digest: Digest
    ciphertext_digest: Digest
    receipt: AnchorReceipt | None = None

    def to_json_obj(self) -> dict:
        return {
            "file_id": self.file_id,
            "label": self.label,
            "created_utc": self.created_utc,
            "salt": self.kdf.salt.hex(),
            "iterations": self.kdf.iterations,
            "plaintext_digest": self.plaintext_digest.hex(),
            "ciphertext_digest": self.ciphertext_digest.hex(),
            "receipt": self.receipt.to_json_obj() if self.receipt else PENDING,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FileRecord":
        receipt = obj.get("receipt")
        return cls(
            file_id=obj["file_id"],
            label=obj["label"],
            created_utc=obj["created_utc"],
            kdf=KdfParams(salt=bytes.fromhex(obj["salt"]), iterations=int(obj["iterations"])),
            plaintext_digest=Digest.from_hex(obj["plaintext_digest"]),
            ciphertext_digest=Digest.from_hex(obj["ciphertext_digest"]),
            receipt=None if receipt in (None, PENDING) else AnchorReceipt.from_json_obj(receipt),
        )


class RecordStore:
    """Append-only record log with an in-memory index rebuilt by replay."""

    def __init__(self, path: str | os.PathLike):
        self.path = str(path)
        self._lock = threading.Lock()
        self._records: dict[str, FileRecord] = {}
        self._order: list[str] = []
        parent = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(parent, exist_ok=True)
        repair_torn_tail(self.path)
        self._replay()

    # -- persistence ----------------------------------------------------

    def _log_lines(self) -> list[str]:
        if not os.path.exists(self.path):
            return []
        with open(self.path, "r", encoding="utf-8") as fh:
            raw = fh.read()
        lines = raw.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        elif lines:
            lines.pop()  # torn trailing write from a crash; never acknowledged
        return lines

    def _replay(self) -> None:
        self._records.clear()
        self._order.clear()
        for lineno, line in enumerate(self._log_lines(), start=1):
            if not line:
                continue
            fields = line.split("\t")
            try:
                self._apply(fields)
            except (ValidationError, FormatError, ValueError, IndexError) as exc:
                raise FormatError(
                    f"record log corrupted at line {lineno}: {exc}"
                ) from exc

    def _apply(self, fields: list[str]) -> None:
        op = fields[0]
        if op == "PUT":
            if len(fields) != 9:
                raise FormatError(f"PUT line has {len(fields)} fields, expected 9")
            (_, file_id, created, label, salt_hex, iterations,
             pt_hex, ct_hex, receipt_field) = fields
            if file_id in self._records:
                raise FormatError(f"duplicate PUT for {file_id!r}")
            receipt = None
            if receipt_field != PENDING:
                receipt = AnchorReceipt.from_json(receipt_field)
            record = FileRecord(
                file_id=file_id,
                label=label,
                created_utc=created,
                kdf=KdfParams(salt=bytes.fromhex(salt_hex), iterations=int(iterations)),
                plaintext_digest=Digest.from_hex(pt_hex),
                ciphertext_digest=Digest.from_hex(ct_hex),
                receipt=receipt,
            )
            self._records[file_id] = record
            self._order.append(file_id)
        elif op == "RECEIPT":
            if len(fields) != 3:
                raise FormatError(f"RECEIPT line has {len(fields)} fields, expected 3")
            _, file_id, receipt_json = fields
            existing = self._records.get(file_id)
            if existing is None:
                raise FormatError(f"RECEIPT for unknown record {file_id!r}")
            if existing.receipt is not None:
                raise FormatError(f"second RECEIPT for {file_id!r}")
            self._records[file_id] = replace(
                existing, receipt=AnchorReceipt.from_json(receipt_json)
            )
        else:
            raise FormatError(f"unknown op tag {op!r}")

    def _append(self, line: str) -> None:
        data = line.encode("utf-8")
        with open(self.path, "ab") as fh:
            fh.write(data[:16])
            failpoints.check("record_store_torn_write")
            fh.write(data[16:])
            fh.flush()
            os.fsync(fh.fileno())

    # -- operations ------------------------------------------------------

    def put(self, record: FileRecord) -> None:
        """Append a new record; duplicate file ids are a conflict."""
        if "\t" in record.label or "\n" in record.label:
            raise ValidationError("label must not contain tabs or newlines")
        with self._lock:
            if record.file_id in self._records:
                raise ConflictError(f"record for {record.file_id!r} already exists")
            receipt_field = record.receipt.to_json() if record.receipt else PENDING
            line = "\t".join(
                [
                    "PUT",
                    record.file_id,
                    record.created_utc,
                    record.label,
                    record.kdf.salt.hex(),
                    str(record.kdf.iterations),
                    record.plaintext_digest.hex(),
                    record.ciphertext_digest.hex(),
                    receipt_field,
                ]
            ) + "\n"
            self._append(line)
            self._records[record.file_id] = record
            self._order.append(record.file_id)

    def get(self, file_id: str) -> FileRecord:
        record = self._records.get(file_id)
        if record is None:
            raise NotFoundError(f"no record for file id {file_id!r}")
        return record

    def attach_receipt(self, file_id: str, receipt: AnchorReceipt) -> None:
        """One-time pending -> anchored transition for a record."""
        with self._lock:
            existing = self._records.get(file_id)
            if existing is None:
                raise NotFoundError(f"no record for file id {file_id!r}")
            if existing.receipt is not None:
                raise ConflictError(f"record {file_id!r} already has a receipt")
            line = "\t".join(["RECEIPT", file_id, receipt.to_json()]) + "\n"
            self._append(line)
            self._records[file_id] = replace(existing, receipt=receipt)

    def records(self) -> Iterator[FileRecord]:
        """All records in insertion order."""
        for file_id in self._order:
            yield self._records[file_id]

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, file_id: str) -> bool:
        return file_id in self._records

    def export(self, out: TextIO) -> int:
        """Write every record as one JSON object per line; returns the count.

        This is the disaster-recovery path: the salts required for
        password-based decryption exist only here.
        """
        count = 0
        for record in self.records():
            out.write(json.dumps(record.to_json_obj(), sort_keys=True) + "\n")
            count += 1
        return count
