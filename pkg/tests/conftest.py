"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the production code paths: reference
hashing goes through the cryptography library's hazmat layer (production
uses hashlib), PBKDF2 is reimplemented from the RFC 2898 definition, and the
Merkle root oracle is a top-down recursive construction rather than the
production bottom-up level builder.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass

import pytest
from cryptography.hazmat.primitives import hashes as _chashes

from vaultstamp.anchors import (
    AnchorManager,
    LocalLedgerProvider,
    MODE_IMMEDIATE,
    RemoteAnchorProvider,
)
from vaultstamp.engine import ArchiveEngine
from vaultstamp.mocks import MockAnchorServer, MockRepositoryServer
from vaultstamp.records import RecordStore
from vaultstamp.repository import DatasetRef, LocalRepository

FAST_KDF_ITERATIONS = 16


# -- independent oracles ------------------------------------------------------

def ref_sha512(data: bytes) -> bytes:
    """Reference hash via the cryptography library (production uses hashlib)."""
    digest = _chashes.Hash(_chashes.SHA512())
    digest.update(data)
    return digest.finalize()


def pbkdf2_sha512_pure(password: bytes, salt: bytes, iterations: int, dklen: int) -> bytes:
    """PBKDF2-HMAC-SHA512 straight from the RFC 2898 definition."""
    hlen = 64
    blocks = -(-dklen // hlen)
    derived = b""
    for block_index in range(1, blocks + 1):
        u = hmac.new(password, salt + struct.pack(">I", block_index), hashlib.sha512).digest()
        accum = int.from_bytes(u, "big")
        for _ in range(iterations - 1):
            u = hmac.new(password, u, hashlib.sha512).digest()
            accum ^= int.from_bytes(u, "big")
        derived += accum.to_bytes(hlen, "big")
    return derived[:dklen]


def merkle_root_oracle(leaves: list[bytes]) -> bytes:
    """Root by top-down recursion: split at the largest power of two below n."""
    nodes = [ref_sha512(b"\x00" + leaf) for leaf in leaves]

    def subtree(items: list[bytes]) -> bytes:
        if len(items) == 1:
            return items[0]
        split = 1
        while split * 2 < len(items):
            split *= 2
        return ref_sha512(b"\x01" + subtree(items[:split]) + subtree(items[split:]))

    return subtree(nodes)


def combined_hash_oracle(pairs: list[tuple[bytes, bytes]]) -> bytes:
    """Reference combined hash: manual string assembly + reference hash."""
    text = ""
    first = True
    for pt, ct in pairs:
        for digest in (pt, ct):
            if not first:
                text += "||"
            text += digest.hex()
            first = False
    return ref_sha512(text.encode("ascii"))


# -- engine fixtures ----------------------------------------------------------

@dataclass
class Harness:
    engine: ArchiveEngine
    repository: LocalRepository
    records: RecordStore
    manager: AnchorManager
    provider: object
    root: str
    anchor_server: MockAnchorServer | None = None

    @property
    def dataset(self) -> DatasetRef:
        return DatasetRef(dataset_id="ds", title="test dataset")


def make_harness(
    tmp_path,
    provider_kind: str = "local",
    mode: str = MODE_IMMEDIATE,
    anchor_server: MockAnchorServer | None = None,
    **engine_kwargs,
) -> Harness:
    repository = LocalRepository(tmp_path / "repo")
    records = RecordStore(tmp_path / "records.log")
    if provider_kind == "local":
        provider = LocalLedgerProvider(tmp_path / "ledger.tsv")
    elif provider_kind == "remote":
        assert anchor_server is not None
        provider = RemoteAnchorProvider(anchor_server.url, retry_delay=0.02)
    else:
        raise ValueError(provider_kind)
    manager = AnchorManager(provider, mode=mode, queue_path=tmp_path / "pending.tsv")
    engine_kwargs.setdefault("kdf_iterations", FAST_KDF_ITERATIONS)
    engine = ArchiveEngine(repository, records, manager, **engine_kwargs)
    return Harness(
        engine=engine,
        repository=repository,
        records=records,
        manager=manager,
        provider=provider,
        root=str(tmp_path),
        anchor_server=anchor_server,
    )


@pytest.fixture(scope="session")
def shared_anchor_server():
    server = MockAnchorServer().start()
    yield server
    server.stop()


@pytest.fixture(params=["local", "remote"])
def harness(request, tmp_path, shared_anchor_server):
    """Engine wired to either anchor provider; protocol tests must pass on both."""
    if request.param == "remote":
        yield make_harness(tmp_path, "remote", anchor_server=shared_anchor_server)
    else:
        yield make_harness(tmp_path, "local")


@pytest.fixture
def local_harness(tmp_path):
    yield make_harness(tmp_path, "local")


@pytest.fixture
def repo_server():
    server = MockRepositoryServer().start()
    yield server
    server.stop()
