"""Record store: put/get/receipt semantics, durability, replay, torn lines."""

from __future__ import annotations

import pytest

from vaultstamp.anchors import AnchorReceipt, LocalLedgerProvider
from vaultstamp.crypto import KdfParams, hash_bytes
from vaultstamp.errors import ConflictError, FormatError, NotFoundError
from vaultstamp.records import FileRecord, RecordStore


def _record(file_id: str, receipt: AnchorReceipt | None = None) -> FileRecord:
    return FileRecord(
        file_id=file_id,
        label=f"{file_id}.bin",
        created_utc="2026-08-10T00:00:00.000000Z",
        kdf=KdfParams(salt=bytes(16), iterations=120_000),
        plaintext_digest=hash_bytes(file_id.encode()),
        ciphertext_digest=hash_bytes(file_id.encode() + b"ct"),
        receipt=receipt,
    )


def _receipt(tmp_path, tag: bytes) -> AnchorReceipt:
    return LocalLedgerProvider(tmp_path / "rledger.tsv").submit(hash_bytes(tag))


class TestPutGet:
    def test_roundtrip(self, tmp_path):
        store = RecordStore(tmp_path / "records.log")
        record = _record("alpha")
        store.put(record)
        assert store.get("alpha") == record

    def test_duplicate_put_conflicts(self, tmp_path):
        store = RecordStore(tmp_path / "records.log")
        store.put(_record("alpha"))
        with pytest.raises(ConflictError):
            store.put(_record("alpha"))

    def test_unknown_id_not_found(self, tmp_path):
        store = RecordStore(tmp_path / "records.log")
        with pytest.raises(NotFoundError):
            store.get("ghost")

    def test_durability_across_restart(self, tmp_path):
        path = tmp_path / "records.log"
        record = _record("beta")
        RecordStore(path).put(record)
        assert RecordStore(path).get("beta") == record

    def test_record_carries_no_key_material(self, tmp_path):
        record = _record("gamma")
        fields = set(record.to_json_obj())
        assert fields == {
            "file_id", "label", "created_utc", "salt", "iterations",
            "plaintext_digest", "ciphertext_digest", "receipt",
        }

    def test_insertion_order_preserved(self, tmp_path):
        store = RecordStore(tmp_path / "records.log")
        for name in ("one", "two", "three"):
            store.put(_record(name))
        assert [r.file_id for r in store.records()] == ["one", "two", "three"]
        assert len(store) == 3 and "two" in store


class TestReceiptAttachment:
    def test_pending_to_anchored(self, tmp_path):
        store = RecordStore(tmp_path / "records.log")
        store.put(_record("delta"))
        receipt = _receipt(tmp_path, b"delta")
        store.attach_receipt("delta", receipt)
        assert store.get("delta").receipt == receipt

    def test_second_attach_conflicts(self, tmp_path):
        store = RecordStore(tmp_path / "records.log")
        store.put(_record("eps"))
        store.attach_receipt("eps", _receipt(tmp_path, b"eps"))
        with pytest.raises(ConflictError):
            store.attach_receipt("eps", _receipt(tmp_path, b"eps2"))

    def test_attach_unknown_not_found(self, tmp_path):
        store = RecordStore(tmp_path / "records.log")
        with pytest.raises(NotFoundError):
            store.attach_receipt("nobody", _receipt(tmp_path, b"x"))

    def test_attachment_survives_restart(self, tmp_path):
        path = tmp_path / "records.log"
        store = RecordStore(path)
        store.put(_record("zeta"))
        receipt = _receipt(tmp_path, b"zeta")
        store.attach_receipt("zeta", receipt)
        assert RecordStore(path).get("zeta").receipt == receipt

    def test_put_with_receipt_roundtrips(self, tmp_path):
        path = tmp_path / "records.log"
        receipt = _receipt(tmp_path, b"pre")
        RecordStore(path).put(_record("pre", receipt=receipt))
        assert RecordStore(path).get("pre").receipt == receipt


class TestReplayEdgeCases:
    def test_torn_trailing_line_dropped(self, tmp_path):
        path = tmp_path / "records.log"
        store = RecordStore(path)
        store.put(_record("kept"))
        with open(path, "ab") as fh:
            fh.write(b"PUT\thalf-written\t2026")  # no newline
        reopened = RecordStore(path)
        assert "kept" in reopened
        assert "half-written" not in reopened
        # appending after the repair keeps the log clean
        reopened.put(_record("after"))
        final = RecordStore(path)
        assert {r.file_id for r in final.records()} == {"kept", "after"}

    def test_malformed_interior_line_refuses_load(self, tmp_path):
        path = tmp_path / "records.log"
        store = RecordStore(path)
        store.put(_record("a"))
        store.put(_record("b"))
        lines = path.read_text().splitlines()
        lines[0] = "PUT\tbroken"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError):
            RecordStore(path)

    def test_receipt_for_missing_put_refuses_load(self, tmp_path):
        path = tmp_path / "records.log"
        store = RecordStore(path)
        store.put(_record("a"))
        store.attach_receipt("a", _receipt(tmp_path, b"a"))
        lines = path.read_text().splitlines()
        del lines[0]  # drop the PUT, keep the RECEIPT
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError):
            RecordStore(path)

    def test_log_line_format(self, tmp_path):
        path = tmp_path / "records.log"
        store = RecordStore(path)
        record = _record("fmt")
        store.put(record)
        line = path.read_text().strip()
        fields = line.split("\t")
        assert fields[0] == "PUT"
        assert fields[1] == "fmt"
        assert fields[3] == "fmt.bin"
        assert fields[4] == bytes(16).hex()
        assert fields[5] == "120000"
        assert fields[6] == record.plaintext_digest.hex()
        assert fields[7] == record.ciphertext_digest.hex()
        assert fields[8] == "PENDING"


def test_export_json_lines(tmp_path):
    import io
    import json

    store = RecordStore(tmp_path / "records.log")
    store.put(_record("x1"))
    store.put(_record("x2"))
    out = io.StringIO()
    assert store.export(out) == 2
    lines = out.getvalue().strip().splitlines()
    parsed = [json.loads(line) for line in lines]
    assert [p["file_id"] for p in parsed] == ["x1", "x2"]
    assert parsed[0]["salt"] == bytes(16).hex()
    assert FileRecord.from_json_obj(parsed[0]) == store.get("x1")
