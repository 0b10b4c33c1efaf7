"""Ledger chain, receipt verification, batching, queue durability, and the
remote provider client against the bundled mock."""

from __future__ import annotations

import pytest

from vaultstamp.anchors import (
    AnchorManager,
    AnchorReceipt,
    LEDGER_GENESIS,
    LocalLedgerProvider,
    MODE_CONCAT_BATCH,
    MODE_IMMEDIATE,
    MODE_MERKLE_BATCH,
    PendingQueue,
    QueuedDigest,
    RemoteAnchorProvider,
    verify_receipt,
)
from vaultstamp.crypto import hash_bytes
from vaultstamp.errors import AnchorUnavailableError, LedgerCorruptionError
from vaultstamp.mocks import MockAnchorServer
from vaultstamp.provenance import combined_hash, file_combined_hash

from conftest import merkle_root_oracle, ref_sha512


def _digest(tag: bytes):
    return hash_bytes(tag)


class TestLocalLedger:
    def test_genesis_chain_value(self, tmp_path):
        provider = LocalLedgerProvider(tmp_path / "ledger.tsv")
        digest = _digest(b"first")
        receipt = provider.submit(digest)
        assert receipt.verification_link == "local://ledger/0"
        line = (tmp_path / "ledger.tsv").read_text().strip()
        seq, ts, digest_hex, chain_hex = line.split("\t")
        assert seq == "0"
        assert digest_hex == digest.hex()
        expected = ref_sha512(LEDGER_GENESIS + digest + ts.encode())
        assert chain_hex == expected.hex()

    def test_duplicate_digest_gets_new_seq(self, tmp_path):
        provider = LocalLedgerProvider(tmp_path / "ledger.tsv")
        digest = _digest(b"dup")
        first = provider.submit(digest)
        second = provider.submit(digest)
        assert first.verification_link == "local://ledger/0"
        assert second.verification_link == "local://ledger/1"

    def test_resolve(self, tmp_path):
        provider = LocalLedgerProvider(tmp_path / "ledger.tsv")
        digest = _digest(b"resolve-me")
        receipt = provider.submit(digest)
        resolved = provider.resolve(receipt.verification_link)
        assert resolved is not None
        assert resolved[0] == digest
        assert provider.resolve("local://ledger/99") is None
        assert provider.resolve("weird://nope") is None

    def test_audit_clean_100_entries(self, tmp_path):
        provider = LocalLedgerProvider(tmp_path / "ledger.tsv")
        for i in range(100):
            provider.submit(_digest(bytes([i])))
        audit = provider.audit()
        assert audit.ok and audit.entries == 100

    def test_audit_detects_edited_digest(self, tmp_path):
        path = tmp_path / "ledger.tsv"
        provider = LocalLedgerProvider(path)
        for i in range(10):
            provider.submit(_digest(bytes([i])))
        lines = path.read_text().splitlines()
        fields = lines[4].split("\t")
        fields[2] = fields[2][:-2] + ("00" if fields[2][-2:] != "00" else "11")
        lines[4] = "\t".join(fields)
        path.write_text("\n".join(lines) + "\n")
        audit = LocalLedgerProvider(path).audit()
        assert not audit.ok
        assert audit.first_bad_seq == 4

    def test_audit_detects_deleted_line(self, tmp_path):
        path = tmp_path / "ledger.tsv"
        provider = LocalLedgerProvider(path)
        for i in range(10):
            provider.submit(_digest(bytes([i])))
        lines = path.read_text().splitlines()
        del lines[3]
        path.write_text("\n".join(lines) + "\n")
        audit = LocalLedgerProvider(path).audit()
        assert not audit.ok
        assert audit.first_bad_seq == 3

    def test_torn_trailing_line_repaired(self, tmp_path):
        path = tmp_path / "ledger.tsv"
        provider = LocalLedgerProvider(path)
        provider.submit(_digest(b"a"))
        provider.submit(_digest(b"b"))
        with open(path, "ab") as fh:
            fh.write(b"2\t2026-01-01T00:0")  # torn write, no newline
        reopened = LocalLedgerProvider(path)
        assert reopened.audit().ok
        receipt = reopened.submit(_digest(b"c"))
        assert receipt.verification_link == "local://ledger/2"
        # the torn bytes must not have corrupted the file: a fresh replay
        # sees three clean entries
        final = LocalLedgerProvider(path).audit()
        assert final.ok and final.entries == 3

    def test_timestamps_monotonic(self, tmp_path):
        times = iter(["2026-01-01T00:00:02Z", "2026-01-01T00:00:01Z", "2026-01-01T00:00:03Z"])
        provider = LocalLedgerProvider(tmp_path / "l.tsv", clock=lambda: next(times))
        r1 = provider.submit(_digest(b"1"))
        r2 = provider.submit(_digest(b"2"))
        r3 = provider.submit(_digest(b"3"))
        assert r1.timestamp_utc <= r2.timestamp_utc <= r3.timestamp_utc
        assert provider.audit().ok

    def test_malformed_interior_line_raises_on_load(self, tmp_path):
        path = tmp_path / "ledger.tsv"
        provider = LocalLedgerProvider(path)
        provider.submit(_digest(b"x"))
        with open(path, "a") as fh:
            fh.write("garbage line\n")
        provider.submit(_digest(b"y"))  # same instance keeps appending
        with pytest.raises(LedgerCorruptionError):
            LocalLedgerProvider(path)


class TestReceiptSerialization:
    def test_plain_receipt_roundtrip(self, tmp_path):
        provider = LocalLedgerProvider(tmp_path / "l.tsv")
        receipt = provider.submit(_digest(b"ser"))
        assert AnchorReceipt.from_json(receipt.to_json()) == receipt

    def test_batch_receipts_roundtrip(self, tmp_path):
        manager = AnchorManager(
            LocalLedgerProvider(tmp_path / "l.tsv"),
            mode=MODE_MERKLE_BATCH,
            queue_path=tmp_path / "q.tsv",
        )
        for i in range(3):
            manager.anchor_file(f"f{i}", _digest(bytes([i])), _digest(bytes([i, i])))
        result = manager.flush()
        for receipt in result.per_file.values():
            assert AnchorReceipt.from_json(receipt.to_json()) == receipt


class TestVerifyReceipt:
    def test_roundtrip_and_mismatch(self, tmp_path):
        provider = LocalLedgerProvider(tmp_path / "l.tsv")
        digest = _digest(b"v")
        receipt = provider.submit(digest)
        assert verify_receipt(provider, receipt, digest)
        assert not verify_receipt(provider, receipt, _digest(b"other"))

    def test_unknown_link_is_false(self, tmp_path):
        provider = LocalLedgerProvider(tmp_path / "l.tsv")
        receipt = provider.submit(_digest(b"k"))
        forged = AnchorReceipt(
            verification_link="local://ledger/7",
            anchored_digest=receipt.anchored_digest,
            timestamp_utc=receipt.timestamp_utc,
            provider_id=receipt.provider_id,
        )
        assert not verify_receipt(provider, forged, receipt.anchored_digest)


class TestBatching:
    def test_merkle_queue_of_one(self, tmp_path):
        manager = AnchorManager(
            LocalLedgerProvider(tmp_path / "l.tsv"),
            mode=MODE_MERKLE_BATCH,
            queue_path=tmp_path / "q.tsv",
        )
        pt, ct = _digest(b"pt"), _digest(b"ct")
        assert manager.anchor_file("only", pt, ct) is None
        result = manager.flush()
        assert result.flushed == 1
        receipt = result.per_file["only"]
        leaf = file_combined_hash(pt, ct)
        assert bytes(receipt.anchored_digest) == ref_sha512(b"\x00" + leaf)
        assert receipt.batch_context.proof.siblings == ()
        assert manager.verify_receipt(receipt, leaf)

    def test_merkle_queue_of_four_all_verify(self, tmp_path):
        manager = AnchorManager(
            LocalLedgerProvider(tmp_path / "l.tsv"),
            mode=MODE_MERKLE_BATCH,
            queue_path=tmp_path / "q.tsv",
        )
        pairs = []
        for i in range(4):
            pt, ct = _digest(b"p%d" % i), _digest(b"c%d" % i)
            pairs.append((pt, ct))
            manager.anchor_file(f"f{i}", pt, ct)
        result = manager.flush()
        leaves = [file_combined_hash(pt, ct) for pt, ct in pairs]
        assert bytes(result.batch_receipt.anchored_digest) == merkle_root_oracle(leaves)
        for i in range(4):
            assert manager.verify_receipt(result.per_file[f"f{i}"], leaves[i])
        # cross-file receipts must not verify
        assert not manager.verify_receipt(result.per_file["f0"], leaves[1])

    def test_concat_queue_of_three(self, tmp_path):
        manager = AnchorManager(
            LocalLedgerProvider(tmp_path / "l.tsv"),
            mode=MODE_CONCAT_BATCH,
            queue_path=tmp_path / "q.tsv",
        )
        pairs = []
        for i in range(3):
            pt, ct = _digest(b"cp%d" % i), _digest(b"cc%d" % i)
            pairs.append((pt, ct))
            manager.anchor_file(f"f{i}", pt, ct)
        result = manager.flush()
        assert result.batch_receipt.anchored_digest == combined_hash(pairs).value
        for i in range(3):
            assert manager.verify_receipt(
                result.per_file[f"f{i}"], file_combined_hash(*pairs[i])
            )

    def test_flush_empty_queue_is_distinguishable_noop(self, tmp_path):
        manager = AnchorManager(
            LocalLedgerProvider(tmp_path / "l.tsv"),
            mode=MODE_MERKLE_BATCH,
            queue_path=tmp_path / "q.tsv",
        )
        result = manager.flush()
        assert result.flushed == 0
        assert result.per_file == {}
        assert result.batch_receipt is None

    def test_queue_survives_restart(self, tmp_path):
        queue_path = tmp_path / "q.tsv"
        manager = AnchorManager(
            LocalLedgerProvider(tmp_path / "l.tsv"),
            mode=MODE_MERKLE_BATCH,
            queue_path=queue_path,
        )
        manager.anchor_file("persisted", _digest(b"qp"), _digest(b"qc"))
        del manager
        reopened = AnchorManager(
            LocalLedgerProvider(tmp_path / "l.tsv"),
            mode=MODE_MERKLE_BATCH,
            queue_path=queue_path,
        )
        assert [e.file_id for e in reopened.pending()] == ["persisted"]
        result = reopened.flush()
        assert result.flushed == 1
        assert reopened.pending() == []

    def test_queue_torn_line_ignored(self, tmp_path):
        queue_path = tmp_path / "q.tsv"
        queue = PendingQueue(queue_path)
        queue.append(QueuedDigest("ok", _digest(b"1"), _digest(b"2")))
        with open(queue_path, "ab") as fh:
            fh.write(b"torn\tdeadbe")
        assert [e.file_id for e in PendingQueue(queue_path).entries()] == ["ok"]


class TestRemoteProvider:
    def test_submit_and_resolve_against_mock(self):
        with MockAnchorServer() as server:
            provider = RemoteAnchorProvider(server.url, retry_delay=0.01)
            digest = _digest(b"remote")
            receipt = provider.submit(digest)
            assert receipt.verification_link == "mock://proof/1"
            assert verify_receipt(provider, receipt, digest)
            assert provider.resolve("mock://proof/404") is None

    def test_retries_transient_failures(self):
        with MockAnchorServer() as server:
            server.fail_next_submissions = 2
            provider = RemoteAnchorProvider(server.url, max_attempts=4, retry_delay=0.01)
            receipt = provider.submit(_digest(b"retry"))
            assert receipt.verification_link.startswith("mock://proof/")

    def test_outage_raises_after_bounded_retries(self):
        with MockAnchorServer() as server:
            server.fail_next_submissions = 99
            provider = RemoteAnchorProvider(server.url, max_attempts=3, retry_delay=0.01)
            with pytest.raises(AnchorUnavailableError):
                provider.submit(_digest(b"down"))
            assert server.fail_next_submissions == 96  # exactly 3 attempts

    def test_unreachable_host(self):
        provider = RemoteAnchorProvider(
            "http://127.0.0.1:1", max_attempts=2, retry_delay=0.01, timeout=0.2
        )
        with pytest.raises(AnchorUnavailableError):
            provider.submit(_digest(b"nohost"))

    def test_manager_marks_pending_on_outage_then_flushes(self, tmp_path):
        with MockAnchorServer() as server:
            provider = RemoteAnchorProvider(server.url, max_attempts=2, retry_delay=0.01)
            manager = AnchorManager(provider, mode=MODE_IMMEDIATE, queue_path=tmp_path / "q.tsv")
            server.fail_next_submissions = 99
            pt, ct = _digest(b"op"), _digest(b"oc")
            assert manager.anchor_file("stuck", pt, ct) is None
            assert [e.file_id for e in manager.pending()] == ["stuck"]
            server.fail_next_submissions = 0
            result = manager.flush()
            assert result.flushed == 1
            assert manager.verify_receipt(
                result.per_file["stuck"], file_combined_hash(pt, ct)
            )
