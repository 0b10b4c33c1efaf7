"""CLI behavior: command output, exit codes, config plumbing."""

from __future__ import annotations

import json
import os

import pytest

from vaultstamp import cli
from vaultstamp.config import load_config, parse_config_text
from vaultstamp.errors import ValidationError

PASSWORD = "cli test password"


@pytest.fixture
def env(tmp_path, monkeypatch):
    """Isolated archive root + password in the environment."""
    root = tmp_path / "archive"
    monkeypatch.setenv("VAULTSTAMP_ROOT", str(root))
    monkeypatch.setenv("VAULTSTAMP_PASSWORD", PASSWORD)
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _write(tmp_path, name: str, data: bytes) -> str:
    path = tmp_path / name
    path.write_bytes(data)
    return str(path)


def run(args: list[str]) -> int:
    return cli.main(args)


class TestUploadDownload:
    def test_upload_single_file_table(self, env, capsys):
        path = _write(env, "doc.txt", b"hello cli")
        assert run(["upload", "ds", path]) == 0
        out = capsys.readouterr().out
        lines = out.strip().splitlines()
        assert lines[0].startswith("file_id\tlabel\tsalt")
        fields = lines[1].split("\t")
        assert fields[1] == "doc.txt"
        assert len(fields[3]) == 128 and len(fields[4]) == 128
        assert fields[5] == "anchored"
        assert fields[6].startswith("local://ledger/")

    def test_unreadable_path_partial_success(self, env, capsys):
        good1 = _write(env, "a.txt", b"a")
        good2 = _write(env, "b.txt", b"b")
        code = run(["upload", "ds", good1, str(env / "missing.txt"), good2])
        captured = capsys.readouterr()
        assert code == 1
        assert len([l for l in captured.out.strip().splitlines()[1:]]) == 2
        assert "missing.txt" in captured.err

    def test_password_roundtrip(self, env, capsys):
        payload = os.urandom(10_000)
        path = _write(env, "round.bin", payload)
        assert run(["upload", "ds", path]) == 0
        file_id = capsys.readouterr().out.strip().splitlines()[1].split("\t")[0]
        out_path = str(env / "restored.bin")
        assert run(["download", file_id, "--out", out_path]) == 0
        assert open(out_path, "rb").read() == payload

    def test_wrong_password_exit_2_no_output(self, env, capsys, monkeypatch):
        path = _write(env, "locked.bin", b"locked")
        assert run(["upload", "ds", path]) == 0
        file_id = capsys.readouterr().out.strip().splitlines()[1].split("\t")[0]
        monkeypatch.setenv("VAULTSTAMP_PASSWORD", "wrong")
        out_path = str(env / "should-not-exist.bin")
        assert run(["download", file_id, "--out", out_path]) == 2
        assert not os.path.exists(out_path)
        assert not os.path.exists(out_path + ".part")

    def test_escrow_share_files_roundtrip(self, env, capsys, monkeypatch):
        payload = b"escrowed by the cli"
        path = _write(env, "esc.bin", payload)
        share_a = str(env / "share-a.hex")
        share_b = str(env / "share-b.hex")
        assert run([
            "upload", "ds", path, "--escrow",
            "--share-a-out", share_a, "--share-b-out", share_b,
        ]) == 0
        file_id = capsys.readouterr().out.strip().splitlines()[1].split("\t")[0]
        # download must work with the shares and no password at all
        monkeypatch.delenv("VAULTSTAMP_PASSWORD")
        out_path = str(env / "esc-restored.bin")
        assert run([
            "download", file_id, "--out", out_path, "--shares", share_a, share_b,
        ]) == 0
        assert open(out_path, "rb").read() == payload

    def test_escrow_requires_distinct_paths(self, env):
        path = _write(env, "x.bin", b"x")
        same = str(env / "same.hex")
        code = run([
            "upload", "ds", path, "--escrow",
            "--share-a-out", same, "--share-b-out", same,
        ])
        assert code == 1

    def test_no_password_source_is_operational_error(self, env, monkeypatch, capsys):
        monkeypatch.delenv("VAULTSTAMP_PASSWORD")
        path = _write(env, "nopw.bin", b"x")
        assert run(["upload", "ds", path]) == 1


class TestVerifyAuditFlush:
    def _upload_one(self, env, capsys, data: bytes = b"to verify") -> str:
        path = _write(env, "v.bin", data)
        assert run(["upload", "ds", path]) == 0
        return capsys.readouterr().out.strip().splitlines()[1].split("\t")[0]

    def test_verify_anchored_pass(self, env, capsys):
        file_id = self._upload_one(env, capsys)
        assert run(["verify", file_id]) == 0
        out = capsys.readouterr().out
        assert "ciphertext_check:    pass" in out
        assert "anchor_check:        pass" in out
        assert 'h = sha512( hex(H(m)) + "||" + hex(H(c)) )' in out

    def test_verify_with_plaintext_all_pass(self, env, capsys):
        payload = b"full verification"
        file_id = self._upload_one(env, capsys, payload)
        original = _write(env, "orig.bin", payload)
        assert run(["verify", file_id, "--plaintext", original]) == 0
        out = capsys.readouterr().out
        assert "plaintext_check:     pass" in out
        assert "combined_hash_check: pass" in out

    def test_verify_pending_exit_3(self, env, capsys, monkeypatch):
        monkeypatch.setenv("VAULTSTAMP_ANCHOR_MODE", "merkle_batch")
        file_id = self._upload_one(env, capsys)
        assert run(["verify", file_id]) == 3
        assert "anchor_check:        pending" in capsys.readouterr().out

    def test_verify_tampered_exit_2(self, env, capsys):
        file_id = self._upload_one(env, capsys)
        repo_root = env / "archive" / "repo" / "ds"
        stored = next(repo_root.glob(f"{file_id}.bin"))
        raw = bytearray(stored.read_bytes())
        raw[len(raw) // 2] ^= 1
        stored.write_bytes(raw)
        assert run(["verify", file_id]) == 2
        out = capsys.readouterr().out
        assert "ciphertext_check:    fail" in out

    def test_flush_then_verify(self, env, capsys, monkeypatch):
        monkeypatch.setenv("VAULTSTAMP_ANCHOR_MODE", "merkle_batch")
        file_id = self._upload_one(env, capsys)
        assert run(["flush"]) == 0
        assert "anchored 1 pending digest(s)" in capsys.readouterr().out
        assert run(["verify", file_id]) == 0
        out = capsys.readouterr().out
        # the inclusion path is printed for hand-auditing batched anchors
        assert "index 0" in out
        assert "root " in out

    def test_audit_fresh_pass(self, env, capsys):
        self._upload_one(env, capsys)
        assert run(["audit"]) == 0
        assert "audit: ok" in capsys.readouterr().out

    def test_audit_edited_ledger_fails_with_seq(self, env, capsys):
        self._upload_one(env, capsys)
        ledger = env / "archive" / "ledger.tsv"
        lines = ledger.read_text().splitlines()
        fields = lines[0].split("\t")
        fields[2] = ("0" * 128) if fields[2][0] != "0" else ("1" * 128)
        lines[0] = "\t".join(fields)
        ledger.write_text("\n".join(lines) + "\n")
        assert run(["audit"]) == 2
        assert "FAIL at seq 0" in capsys.readouterr().out

    def test_audit_deleted_receipt_line_fails_cross_check(self, env, capsys):
        self._upload_one(env, capsys)
        log = env / "archive" / "records.log"
        kept = [l for l in log.read_text().splitlines() if not l.startswith("RECEIPT")]
        log.write_text("\n".join(kept) + "\n")
        assert run(["audit"]) == 2
        assert "not referenced by any record" in capsys.readouterr().out

    def test_export_json_lines(self, env, capsys):
        file_id = self._upload_one(env, capsys)
        assert run(["export"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert json.loads(lines[0])["file_id"] == file_id


class TestRemoteProviderConfig:
    def test_upload_verify_against_remote_anchor(self, env, capsys, monkeypatch):
        from vaultstamp.mocks import MockAnchorServer

        with MockAnchorServer() as server:
            monkeypatch.setenv("VAULTSTAMP_ANCHOR_PROVIDER", server.url)
            path = _write(env, "remote.bin", b"anchored remotely")
            assert run(["upload", "ds", path]) == 0
            row = capsys.readouterr().out.strip().splitlines()[1].split("\t")
            assert row[6].startswith("mock://proof/")
            assert run(["verify", row[0]]) == 0
            assert "anchor_check:        pass" in capsys.readouterr().out
            assert run(["audit"]) == 0
            out = capsys.readouterr().out
            assert "ledger: skipped (remote anchor provider)" in out


class TestBenchCommand:
    def test_bench_csv_shape(self, env, capsys):
        assert run([
            "bench", "--sizes", "4KB,8KB", "--kinds", "tabular,binary",
            "--repeats", "1",
        ]) == 0
        out = capsys.readouterr().out
        lines = out.strip().splitlines()
        assert lines[0] == "operation,4000B/binary,4000B/tabular,8000B/binary,8000B/tabular"
        operations = [line.split(",")[0] for line in lines[1:]]
        assert operations == [
            "key_gen", "encrypt", "plaintext_hash", "ciphertext_hash",
            "store", "record_put", "other", "total",
        ]

    def test_bench_raw_csv(self, env, capsys):
        raw = str(env / "raw.csv")
        assert run(["bench", "--sizes", "4KB", "--kinds", "binary",
                    "--repeats", "2", "--raw", raw]) == 0
        capsys.readouterr()
        lines = open(raw).read().strip().splitlines()
        assert lines[0] == "operation,size_bytes,kind,repeat,elapsed_ms"
        assert len(lines) == 1 + 8 * 2  # 8 labels x 2 repeats


class TestServeCommand:
    def test_serve_subprocess_end_to_end(self, env):
        import subprocess
        import sys
        import time

        import requests

        proc = subprocess.Popen(
            [sys.executable, "-m", "vaultstamp.cli", "serve", "--port", "0"],
            env=dict(os.environ),
            stderr=subprocess.PIPE,
            text=True,
        )
        try:
            line = proc.stderr.readline()
            url = line.split()[2]
            deadline = time.monotonic() + 10
            while time.monotonic() < deadline:
                try:
                    if requests.get(f"{url}/healthz", timeout=1).status_code == 200:
                        break
                except requests.RequestException:
                    time.sleep(0.05)
            resp = requests.post(
                f"{url}/datasets/ds/files",
                files={"file": ("wire.bin", b"via the serve command")},
                headers={"X-Archive-Password": PASSWORD},
                timeout=10,
            )
            assert resp.status_code == 201, resp.text
            file_id = resp.json()["files"][0]["file_id"]
            got = requests.get(
                f"{url}/files/{file_id}?mode=password",
                headers={"X-Archive-Password": PASSWORD},
                timeout=10,
            )
            assert got.content == b"via the serve command"
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestConfig:
    def test_parse_size(self):
        assert cli.parse_size("1MB") == 1_000_000
        assert cli.parse_size("2MiB") == 2 * 2**20
        assert cli.parse_size("512") == 512
        assert cli.parse_size("1.5KB") == 1500

    def test_config_file_and_env_override(self, tmp_path, monkeypatch):
        config_path = tmp_path / "vault.conf"
        config_path.write_text(
            "# archive settings\n"
            "anchor_mode = merkle_batch\n"
            "chunk_size_bytes = 4096\n"
        )
        monkeypatch.setenv("VAULTSTAMP_ANCHOR_MODE", "concat_batch")
        config = load_config(config_path=str(config_path), root=str(tmp_path))
        assert config.anchor_mode == "concat_batch"  # env wins
        assert config.chunk_size_bytes == 4096
        assert config.repository == os.path.join(str(tmp_path), "repo")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            parse_config_text("mystery = 1\n")

    def test_bad_anchor_mode_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_config(
                root=str(tmp_path), env={"VAULTSTAMP_ANCHOR_MODE": "sometimes"}
            )

    def test_password_never_in_argv(self):
        # the parser must not define any flag that takes a password value
        parser = cli.build_parser()
        for action_group in parser._subparsers._group_actions:
            for sub in action_group.choices.values():
                for action in sub._actions:
                    assert "--password" not in action.option_strings
                    assert all(
                        not opt.startswith("--password=")
                        for opt in action.option_strings
                    )
                    if "--password-prompt" in action.option_strings:
                        assert action.nargs == 0  # a flag, not a value
