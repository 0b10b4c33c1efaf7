"""Storage backends for opaque (encrypted) file content.

The repository plays the archival-platform role: it stores ciphertext
envelopes under dataset groupings and hands back stable file ids. It never
sees plaintext, passwords, keys, or salts; only envelope bytes and labels
cross this interface.

Two implementations share the interface: a local filesystem store and an
HTTP client speaking a minimal upload/download contract
(``POST /datasets/{id}/files`` multipart -> ``{"file_id": ...}``,
``GET /files/{id}`` -> raw bytes), with ``DELETE /files/{id}`` supporting
the engine's per-file rollback.
"""

from __future__ import annotations

import os
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass
from typing import BinaryIO

import requests

from .errors import NotFoundError, ValidationError
from .streams import DEFAULT_CHUNK_SIZE, IterReader


@dataclass(frozen=True)
class DatasetRef:
    dataset_id: str
    title: str = ""

    def __post_init__(self) -> None:
        if not self.dataset_id:
            raise ValidationError("dataset_id must be non-empty")
        if "/" in self.dataset_id or "\t" in self.dataset_id or "\n" in self.dataset_id:
            raise ValidationError("dataset_id must not contain '/', tabs, or newlines")


@dataclass(frozen=True)
class StoredFileRef:
    file_id: str
    dataset: DatasetRef
    byte_length: int
    label: str


def _check_label(label: str) -> None:
    if "\t" in label or "\n" in label or "\r" in label:
        raise ValidationError("label must not contain tabs or newlines")


class LocalRepository:
    """Filesystem store: ``<root>/<dataset_id>/<file_id>.bin`` plus a
    per-dataset ``index.tsv`` (file_id, label, byte_length per line).

    Content is written to a temporary file and renamed into place, so a
    failed store never leaves a partial file visible. Reads at most
    ``chunk_size`` bytes of content at a time.
    """

    def __init__(self, root: str | os.PathLike, chunk_size: int = DEFAULT_CHUNK_SIZE):
        self.root = str(root)
        self.chunk_size = chunk_size
        self._lock = threading.Lock()
        os.makedirs(self.root, exist_ok=True)
        self._locations: dict[str, str] = {}  # file_id -> dataset_id
        self._scan()

    def _index_path(self, dataset_id: str) -> str:
        return os.path.join(self.root, dataset_id, "index.tsv")

    def _scan(self) -> None:
        self._locations.clear()
        for name in sorted(os.listdir(self.root)):
            index = self._index_path(name)
            if not os.path.isfile(index):
                continue
            for file_id, _label, _size in self._read_index(name):
                self._locations[file_id] = name

    def _read_index(self, dataset_id: str) -> list[tuple[str, str, int]]:
        index = self._index_path(dataset_id)
        out: list[tuple[str, str, int]] = []
        if not os.path.exists(index):
            return out
        with open(index, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 3:
                    continue
                out.append((fields[0], fields[1], int(fields[2])))
        return out

    def create_dataset(self, dataset: DatasetRef) -> None:
        os.makedirs(os.path.join(self.root, dataset.dataset_id), exist_ok=True)

    def store(self, dataset: DatasetRef, label: str, content: BinaryIO) -> StoredFileRef:
        _check_label(label)
        dataset_dir = os.path.join(self.root, dataset.dataset_id)
        os.makedirs(dataset_dir, exist_ok=True)
        file_id = uuid.uuid4().hex
        final_path = os.path.join(dataset_dir, f"{file_id}.bin")
        tmp_path = final_path + ".part"
        size = 0
        try:
            with open(tmp_path, "wb") as fh:
                while True:
                    chunk = content.read(self.chunk_size)
                    if not chunk:
                        break
                    fh.write(chunk)
                    size += len(chunk)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp_path, final_path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
            raise
        with self._lock:
            with open(self._index_path(dataset.dataset_id), "a", encoding="utf-8") as fh:
                fh.write(f"{file_id}\t{label}\t{size}\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._locations[file_id] = dataset.dataset_id
        return StoredFileRef(file_id=file_id, dataset=dataset, byte_length=size, label=label)

    def _locate(self, file_id: str) -> str:
        dataset_id = self._locations.get(file_id)
        if dataset_id is None:
            self._scan()  # another process may have stored since our init
            dataset_id = self._locations.get(file_id)
        if dataset_id is None:
            raise NotFoundError(f"unknown file id {file_id!r}")
        return dataset_id

    def fetch(self, file_id: str) -> BinaryIO:
        dataset_id = self._locate(file_id)
        path = os.path.join(self.root, dataset_id, f"{file_id}.bin")
        if not os.path.exists(path):
            raise NotFoundError(f"content missing for file id {file_id!r}")
        return open(path, "rb")

    def list_dataset(self, dataset_id: str) -> list[StoredFileRef]:
        dataset_dir = os.path.join(self.root, dataset_id)
        if not os.path.isdir(dataset_dir):
            raise NotFoundError(f"unknown dataset {dataset_id!r}")
        dataset = DatasetRef(dataset_id=dataset_id)
        return [
            StoredFileRef(file_id=fid, dataset=dataset, byte_length=size, label=label)
            for fid, label, size in self._read_index(dataset_id)
        ]

    def delete(self, file_id: str) -> None:
        dataset_id = self._locate(file_id)
        with self._lock:
            entries = [e for e in self._read_index(dataset_id) if e[0] != file_id]
            tmp = self._index_path(dataset_id) + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                for fid, label, size in entries:
                    fh.write(f"{fid}\t{label}\t{size}\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self._index_path(dataset_id))
            path = os.path.join(self.root, dataset_id, f"{file_id}.bin")
            if os.path.exists(path):
                os.unlink(path)
            self._locations.pop(file_id, None)


class HttpRepository:
    """Client for a remote repository speaking the minimal HTTP contract.

    Uploads retry on 503 (the server may be busy ingesting a previous file),
    honouring ``Retry-After`` when present. An opaque bearer token from the
    configuration is attached verbatim when provided.
    """

    def __init__(
        self,
        base_url: str,
        api_token: str | None = None,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        max_attempts: int = 8,
        retry_delay: float = 0.2,
        timeout: float = 30.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.chunk_size = chunk_size
        self.max_attempts = max_attempts
        self.retry_delay = retry_delay
        self.timeout = timeout
        self._session = session or requests.Session()
        self._headers = {}
        if api_token:
            self._headers["Authorization"] = f"Bearer {api_token}"

    def create_dataset(self, dataset: DatasetRef) -> None:
        resp = self._session.post(
            f"{self.base_url}/datasets",
            json={"dataset_id": dataset.dataset_id, "title": dataset.title},
            headers=self._headers,
            timeout=self.timeout,
        )
        if resp.status_code not in (200, 201, 409):
            raise ValidationError(f"dataset creation failed: {resp.status_code}")

    def store(self, dataset: DatasetRef, label: str, content: BinaryIO) -> StoredFileRef:
        _check_label(label)
        url = f"{self.base_url}/datasets/{dataset.dataset_id}/files"

        # A 503 (server busy ingesting) forces a resend, so a one-shot
        # stream (e.g. the encryption pipeline) is spooled first to make the
        # body replayable across retries.
        spool = None
        if not content.seekable():
            spool = tempfile.SpooledTemporaryFile(max_size=self.chunk_size * 8)
            while True:
                chunk = content.read(self.chunk_size)
                if not chunk:
                    break
                spool.write(chunk)
            spool.seek(0)
            content = spool
        try:
            delay = self.retry_delay
            for attempt in range(self.max_attempts):
                if attempt:
                    time.sleep(delay)
                    delay = min(delay * 2, 2.0)
                    content.seek(0)
                resp = self._session.post(
                    url,
                    files={"file": (label, content, "application/octet-stream")},
                    headers=self._headers,
                    timeout=self.timeout,
                )
                if resp.status_code == 503:
                    retry_after = resp.headers.get("Retry-After")
                    if retry_after:
                        try:
                            delay = max(delay, float(retry_after))
                        except ValueError:
                            pass
                    continue
                break
            if resp.status_code not in (200, 201):
                raise ValidationError(
                    f"upload failed: {resp.status_code} {resp.text[:200]}"
                )
        finally:
            if spool is not None:
                spool.close()
        body = resp.json()
        return StoredFileRef(
            file_id=body["file_id"],
            dataset=dataset,
            byte_length=int(body.get("byte_length", 0)),
            label=label,
        )

    def fetch(self, file_id: str) -> BinaryIO:
        resp = self._session.get(
            f"{self.base_url}/files/{file_id}",
            stream=True,
            headers=self._headers,
            timeout=self.timeout,
        )
        if resp.status_code == 404:
            raise NotFoundError(f"unknown file id {file_id!r}")
        if resp.status_code != 200:
            raise ValidationError(f"fetch failed: {resp.status_code}")
        return IterReader(resp.iter_content(self.chunk_size))

    def list_dataset(self, dataset_id: str) -> list[StoredFileRef]:
        resp = self._session.get(
            f"{self.base_url}/datasets/{dataset_id}",
            headers=self._headers,
            timeout=self.timeout,
        )
        if resp.status_code == 404:
            raise NotFoundError(f"unknown dataset {dataset_id!r}")
        if resp.status_code != 200:
            raise ValidationError(f"listing failed: {resp.status_code}")
        dataset = DatasetRef(dataset_id=dataset_id)
        return [
            StoredFileRef(
                file_id=item["file_id"],
                dataset=dataset,
                byte_length=int(item["byte_length"]),
                label=item["label"],
            )
            for item in resp.json()["files"]
        ]

    def delete(self, file_id: str) -> None:
        resp = self._session.delete(
            f"{self.base_url}/files/{file_id}",
            headers=self._headers,
            timeout=self.timeout,
        )
        if resp.status_code == 404:
            raise NotFoundError(f"unknown file id {file_id!r}")
        if resp.status_code not in (200, 204):
            raise ValidationError(f"delete failed: {resp.status_code}")
