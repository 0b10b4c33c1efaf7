"""Benchmark harness: deterministic test-file generators plus per-operation
timing collection around the upload pipeline.

Timings come from the monotonic clock and are reported per stage using the
fixed breakdown label set. Stages overlap inside the single-pass pipeline,
so the total is reported independently of the parts rather than as their
sum; ``other`` is the unattributed residual, clamped at zero.
"""

from __future__ import annotations

import os
import random
import tempfile
import time
from dataclasses import dataclass
from statistics import mean
from typing import Iterable, Iterator, Sequence

from .engine import ArchiveEngine, TimingCollector
from .errors import ValidationError
from .repository import DatasetRef
from .streams import DEFAULT_CHUNK_SIZE

KIND_TABULAR = "tabular"
KIND_BINARY = "binary"
CONTENT_KINDS = (KIND_TABULAR, KIND_BINARY)

BREAKDOWN_LABELS = (
    "key_gen",
    "encrypt",
    "plaintext_hash",
    "ciphertext_hash",
    "store",
    "record_put",
    "other",
    "total",
)

_TABULAR_COLUMNS = 6
_MIN_ROW = 2 * _TABULAR_COLUMNS  # "0,0,0,0,0,0\n"


@dataclass(frozen=True)
class BenchSample:
    operation: str
    size_bytes: int
    kind: str
    repeat: int
    elapsed_ms: float

    def csv_row(self) -> str:
        return (
            f"{self.operation},{self.size_bytes},{self.kind},"
            f"{self.repeat},{self.elapsed_ms:.3f}"
        )


CSV_HEADER = "operation,size_bytes,kind,repeat,elapsed_ms"


def generate_file(
    size: int, kind: str, seed: int, chunk_size: int = DEFAULT_CHUNK_SIZE
) -> Iterator[bytes]:
    """Yield exactly ``size`` bytes of deterministic content.

    ``binary`` is seeded uniform random bytes. ``tabular`` is comma-separated
    rows of random integers, every complete line carrying the same comma
    count; the final row's last field is padded so the byte count lands
    exactly (sizes below one minimal row degrade to plain padding).
    """
    if size < 0:
        raise ValidationError("size must be >= 0")
    if kind not in CONTENT_KINDS:
        raise ValidationError(f"unknown content kind {kind!r}")
    # str hashes are salted per process, so seed via a stable digest rather
    # than hash((seed, size, kind))
    rnd = random.Random(f"{seed}:{size}:{kind}")
    if kind == KIND_BINARY:
        remaining = size
        while remaining > 0:
            n = min(chunk_size, remaining)
            yield rnd.randbytes(n)
            remaining -= n
        return

    remaining = size
    buf: list[str] = []
    buf_len = 0
    while remaining > 0:
        if remaining < _MIN_ROW:
            yield "".join(buf).encode("ascii") + b"0" * remaining
            return
        row = ",".join(
            str(rnd.randrange(10**8)) for _ in range(_TABULAR_COLUMNS)
        ) + "\n"
        if len(row) > remaining:
            # pad the last field of a minimal row to hit the exact size
            head = "0," * (_TABULAR_COLUMNS - 1)
            row = head + "9" * (remaining - len(head) - 1) + "\n"
        buf.append(row)
        buf_len += len(row)
        remaining -= len(row)
        if buf_len >= chunk_size:
            yield "".join(buf).encode("ascii")
            buf, buf_len = [], 0
    if buf:
        yield "".join(buf).encode("ascii")


def write_generated_file(
    path: str | os.PathLike, size: int, kind: str, seed: int
) -> None:
    with open(path, "wb") as fh:
        for chunk in generate_file(size, kind, seed):
            fh.write(chunk)


def run_benchmark(
    engine: ArchiveEngine,
    sizes: Sequence[int],
    kinds: Sequence[str] = CONTENT_KINDS,
    repeats: int = 3,
    seed: int = 7,
    content_dir: str | None = None,
    warmup: bool = True,
    dataset_id: str = "bench",
) -> list[BenchSample]:
    """Upload generated files through ``engine``, timing each pipeline stage.

    Content for each (size, kind) is generated once and reused across
    repeats. Runs are serial to avoid cross-contamination of timings.
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    for kind in kinds:
        if kind not in CONTENT_KINDS:
            raise ValidationError(f"unknown content kind {kind!r}")

    own_dir = None
    if content_dir is None:
        own_dir = tempfile.TemporaryDirectory(prefix="vaultstamp-bench-")
        content_dir = own_dir.name
    else:
        os.makedirs(content_dir, exist_ok=True)

    dataset = DatasetRef(dataset_id=dataset_id, title="benchmark uploads")
    password = "benchmark-password"
    samples: list[BenchSample] = []
    try:
        if warmup:
            with open(os.path.join(content_dir, "warmup.bin"), "wb") as fh:
                fh.write(b"\0" * 4096)
            with open(os.path.join(content_dir, "warmup.bin"), "rb") as fh:
                engine.upload(dataset, [("warmup.bin", fh)], password)

        for size in sizes:
            for kind in kinds:
                content_path = os.path.join(content_dir, f"{kind}-{size}.dat")
                if not os.path.exists(content_path):
                    write_generated_file(content_path, size, kind, seed)

        # Repeat-major round robin: clock-frequency and cache drift over the
        # run then lands evenly on every (size, kind) instead of skewing
        # whichever size happens to run first.
        for repeat in range(repeats):
            for size in sizes:
                for kind in kinds:
                    content_path = os.path.join(content_dir, f"{kind}-{size}.dat")
                    timings = TimingCollector()
                    start = time.perf_counter()
                    with open(content_path, "rb") as fh:
                        result = engine.upload(
                            dataset,
                            [(f"{kind}-{size}-{repeat}", fh)],
                            password,
                            timings=timings,
                        )
                    total = time.perf_counter() - start
                    if result.failures:
                        raise RuntimeError(f"benchmark upload failed: {result.failures}")
                    attributed = 0.0
                    for label in BREAKDOWN_LABELS:
                        if label in ("other", "total"):
                            continue
                        seconds = timings.seconds.get(label, 0.0)
                        attributed += seconds
                        samples.append(
                            BenchSample(label, size, kind, repeat, seconds * 1000.0)
                        )
                    samples.append(
                        BenchSample(
                            "other", size, kind, repeat,
                            max(0.0, total - attributed) * 1000.0,
                        )
                    )
                    samples.append(BenchSample("total", size, kind, repeat, total * 1000.0))
    finally:
        if own_dir is not None:
            own_dir.cleanup()
    return samples


def mean_elapsed_ms(
    samples: Iterable[BenchSample], operation: str, size: int, kind: str | None = None
) -> float:
    """Mean elapsed milliseconds over matching samples."""
    matched = [
        s.elapsed_ms
        for s in samples
        if s.operation == operation
        and s.size_bytes == size
        and (kind is None or s.kind == kind)
    ]
    if not matched:
        raise ValidationError(f"no samples for ({operation}, {size}, {kind})")
    return mean(matched)


def render_raw_csv(samples: Iterable[BenchSample]) -> str:
    lines = [CSV_HEADER]
    lines.extend(s.csv_row() for s in samples)
    return "\n".join(lines) + "\n"


def render_summary_csv(samples: Sequence[BenchSample]) -> str:
    """Pivot: one row per breakdown label, one column per (size, kind),
    cells holding the mean elapsed milliseconds."""
    combos = sorted({(s.size_bytes, s.kind) for s in samples})
    header = "operation," + ",".join(f"{size}B/{kind}" for size, kind in combos)
    lines = [header]
    for label in BREAKDOWN_LABELS:
        cells = [
            f"{mean_elapsed_ms(samples, label, size, kind):.3f}"
            for size, kind in combos
        ]
        lines.append(label + "," + ",".join(cells))
    return "\n".join(lines) + "\n"
