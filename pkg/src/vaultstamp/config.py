"""Configuration: canonical ``key = value`` text files with per-key
environment overrides, plus the factory that assembles an engine from one.

Recognised keys (environment variable in parentheses):

=====================  ==============================  =========================
key                    default                         meaning
=====================  ==============================  =========================
repository             <root>/repo                     local path, or http(s) URL
record_log_path        <root>/records.log              append-only record log
ledger_path            <root>/ledger.tsv               local anchor ledger
pending_queue_path     <root>/pending.tsv              digests awaiting anchoring
anchor_mode            immediate                       immediate | concat_batch |
                                                       merkle_batch
anchor_provider        local                           "local", or provider URL
batch_interval_seconds 60                              auto-flush period (serve)
chunk_size_bytes       1048576                         streaming chunk size
api_token              (unset)                         opaque bearer token
=====================  ==============================  =========================

Environment overrides use ``VAULTSTAMP_<KEY>`` (e.g. ``VAULTSTAMP_ANCHOR_MODE``).
The base directory ``<root>`` comes from ``--root`` / ``VAULTSTAMP_ROOT`` and
defaults to ``./archive``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .anchors import (
    ANCHOR_MODES,
    AnchorManager,
    LocalLedgerProvider,
    RemoteAnchorProvider,
)
from .engine import ArchiveEngine
from .errors import ValidationError
from .records import RecordStore
from .repository import HttpRepository, LocalRepository
from .streams import DEFAULT_CHUNK_SIZE

ENV_PREFIX = "VAULTSTAMP_"
DEFAULT_ROOT = "archive"

_KEYS = (
    "repository",
    "record_log_path",
    "ledger_path",
    "pending_queue_path",
    "anchor_mode",
    "anchor_provider",
    "batch_interval_seconds",
    "chunk_size_bytes",
    "api_token",
)


@dataclass
class CliConfig:
    repository: str
    record_log_path: str
    ledger_path: str
    pending_queue_path: str
    anchor_mode: str = "immediate"
    anchor_provider: str = "local"
    batch_interval_seconds: float = 60.0
    chunk_size_bytes: int = DEFAULT_CHUNK_SIZE
    api_token: str | None = None

    def __post_init__(self) -> None:
        if self.anchor_mode not in ANCHOR_MODES:
            raise ValidationError(
                f"anchor_mode must be one of {', '.join(ANCHOR_MODES)}"
            )
        if self.chunk_size_bytes < 1:
            raise ValidationError("chunk_size_bytes must be >= 1")
        if self.batch_interval_seconds < 0:
            raise ValidationError("batch_interval_seconds must be >= 0")


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment; blanks ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _KEYS:
            raise ValidationError(f"unknown config key {key!r} (line {lineno})")
        values[key] = value.strip()
    return values


def load_config(
    config_path: str | None = None,
    root: str | None = None,
    env: dict[str, str] | None = None,
) -> CliConfig:
    """Assemble configuration from file, environment, and root defaults.

    Precedence: environment variable > config file > derived default.
    """
    env = os.environ if env is None else env
    values: dict[str, str] = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    for key in _KEYS:
        env_value = env.get(ENV_PREFIX + key.upper())
        if env_value is not None:
            values[key] = env_value

    root = root or env.get(ENV_PREFIX + "ROOT") or DEFAULT_ROOT
    defaults = {
        "repository": os.path.join(root, "repo"),
        "record_log_path": os.path.join(root, "records.log"),
        "ledger_path": os.path.join(root, "ledger.tsv"),
        "pending_queue_path": os.path.join(root, "pending.tsv"),
    }
    for key, default in defaults.items():
        values.setdefault(key, default)

    return CliConfig(
        repository=values["repository"],
        record_log_path=values["record_log_path"],
        ledger_path=values["ledger_path"],
        pending_queue_path=values["pending_queue_path"],
        anchor_mode=values.get("anchor_mode", "immediate"),
        anchor_provider=values.get("anchor_provider", "local"),
        batch_interval_seconds=float(values.get("batch_interval_seconds", "60")),
        chunk_size_bytes=int(values.get("chunk_size_bytes", str(DEFAULT_CHUNK_SIZE))),
        api_token=values.get("api_token") or None,
    )


def build_engine(config: CliConfig, upload_workers: int = 1) -> ArchiveEngine:
    """Wire a repository, record store, and anchor manager per the config."""
    if config.repository.startswith(("http://", "https://")):
        repository = HttpRepository(
            config.repository,
            api_token=config.api_token,
            chunk_size=config.chunk_size_bytes,
        )
    else:
        repository = LocalRepository(config.repository, chunk_size=config.chunk_size_bytes)

    if config.anchor_provider == "local":
        provider = LocalLedgerProvider(config.ledger_path)
    elif config.anchor_provider.startswith(("http://", "https://")):
        provider = RemoteAnchorProvider(config.anchor_provider)
    else:
        raise ValidationError(
            f"anchor_provider must be 'local' or an http(s) URL, "
            f"got {config.anchor_provider!r}"
        )

    manager = AnchorManager(
        provider, mode=config.anchor_mode, queue_path=config.pending_queue_path
    )
    records = RecordStore(config.record_log_path)
    return ArchiveEngine(
        repository,
        records,
        manager,
        chunk_size=config.chunk_size_bytes,
        upload_workers=upload_workers,
    )
