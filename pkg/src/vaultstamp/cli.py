"""Command-line interface.

Thin adapter over the engine: no cryptographic logic lives here. Passwords
are read from an interactive prompt (``--password-prompt``) or the
``VAULTSTAMP_PASSWORD`` environment variable, never from argv.

Exit codes: 0 success, 1 operational error, 2 integrity/authentication
failure, 3 anchor still pending.
"""

from __future__ import annotations

import argparse
import getpass
import os
import shutil
import sys
import tempfile

from . import bench as benchmod
from .anchors import ConcatBatchContext, LocalLedgerProvider, MerkleBatchContext
from .config import CliConfig, build_engine, load_config
from .engine import CHECK_PENDING
from .errors import (
    AuthenticationError,
    IntegrityAlarmError,
    LedgerCorruptionError,
    ValidationError,
    VaultError,
)
from .provenance import COMBINED_HASH_DELIMITER, file_combined_hash
from .repository import DatasetRef
from .service import ArchiveService

EXIT_OK = 0
EXIT_OPERATIONAL = 1
EXIT_INTEGRITY = 2
EXIT_PENDING = 3

PASSWORD_ENV = "VAULTSTAMP_PASSWORD"

_SIZE_SUFFIXES = {
    "B": 1,
    "KB": 10**3, "MB": 10**6, "GB": 10**9,
    "KIB": 2**10, "MIB": 2**20, "GIB": 2**30,
}


def parse_size(text: str) -> int:
    text = text.strip().upper()
    for suffix in sorted(_SIZE_SUFFIXES, key=len, reverse=True):
        if text.endswith(suffix):
            return int(float(text[: -len(suffix)]) * _SIZE_SUFFIXES[suffix])
    return int(text)


def _resolve_password(args) -> str:
    if getattr(args, "password_prompt", False):
        return getpass.getpass("Archive password: ")
    password = os.environ.get(PASSWORD_ENV)
    if password:
        return password
    raise ValidationError(
        f"no password source: pass --password-prompt or set {PASSWORD_ENV}"
    )


def _load_share_file(path: str, file_id: str) -> bytes:
    """Read a share file: either lines of 'file_id<TAB>hex' or one bare hex."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if len(lines) == 1 and "\t" not in lines[0]:
        return bytes.fromhex(lines[0])
    for line in lines:
        fields = line.split("\t")
        if len(fields) == 2 and fields[0] == file_id:
            return bytes.fromhex(fields[1])
    raise ValidationError(f"share file {path!r} has no entry for {file_id!r}")


def _config(args) -> CliConfig:
    return load_config(config_path=args.config, root=args.root)


# -- commands ---------------------------------------------------------------

def cmd_upload(args) -> int:
    if args.escrow:
        if not args.share_a_out or not args.share_b_out:
            raise ValidationError("--escrow requires --share-a-out and --share-b-out")
        if os.path.abspath(args.share_a_out) == os.path.abspath(args.share_b_out):
            raise ValidationError("share output paths must be distinct")
    password = _resolve_password(args)
    engine = build_engine(_config(args))
    dataset = DatasetRef(dataset_id=args.dataset, title=args.title or args.dataset)

    files = []
    missing = []
    for path in args.paths:
        if not os.path.isfile(path):
            missing.append((path, "not a readable file"))
            continue
        files.append((os.path.basename(path), open(path, "rb")))
    if not files:
        raise ValidationError("no readable input files")
    try:
        result = engine.upload(dataset, files, password, escrow=args.escrow)
    finally:
        for _, fh in files:
            fh.close()

    print("file_id\tlabel\tsalt\tplaintext_sha512\tciphertext_sha512\tstate\tlink")
    for ref, record in result.refs:
        state = "anchored" if record.receipt else "pending"
        link = record.receipt.verification_link if record.receipt else "-"
        print(
            f"{record.file_id}\t{record.label}\t{record.kdf.salt.hex()}"
            f"\t{record.plaintext_digest.hex()}\t{record.ciphertext_digest.hex()}"
            f"\t{state}\t{link}"
        )
    if args.escrow and result.shares:
        with open(args.share_a_out, "a", encoding="utf-8") as fa, \
             open(args.share_b_out, "a", encoding="utf-8") as fb:
            for _, record in result.refs:
                pair = result.shares.get(record.file_id)
                if pair is None:
                    continue
                fa.write(f"{record.file_id}\t{pair.share_a.hex()}\n")
                fb.write(f"{record.file_id}\t{pair.share_b.hex()}\n")
        print(f"shares written to {args.share_a_out} and {args.share_b_out}",
              file=sys.stderr)

    failures = list(result.failures) + missing
    for label, message in failures:
        print(f"error: {label}: {message}", file=sys.stderr)
    return EXIT_OPERATIONAL if failures else EXIT_OK


def cmd_download(args) -> int:
    engine = build_engine(_config(args))
    if args.shares:
        share_a = _load_share_file(args.shares[0], args.file_id)
        share_b = _load_share_file(args.shares[1], args.file_id)
        plaintext = engine.download_with_shares(args.file_id, share_a, share_b)
    else:
        password = _resolve_password(args)
        plaintext = engine.download_with_password(args.file_id, password)

    # Plaintext is fully verified at this point; stage the write so a failed
    # copy never leaves a partial output file behind.
    out_tmp = args.out + ".part"
    try:
        with plaintext, open(out_tmp, "wb") as out:
            shutil.copyfileobj(plaintext, out)
        os.replace(out_tmp, args.out)
    except BaseException:
        if os.path.exists(out_tmp):
            os.unlink(out_tmp)
        raise
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    engine = build_engine(_config(args))
    plaintext = open(args.plaintext, "rb") if args.plaintext else None
    try:
        report = engine.verify(args.file_id, plaintext)
    finally:
        if plaintext:
            plaintext.close()

    record = report.record
    print(f"file_id:             {report.file_id}")
    print(f"label:               {record.label}")
    print(f"ciphertext_check:    {report.ciphertext_check}")
    print(f"combined_hash_check: {report.combined_hash_check}")
    print(f"anchor_check:        {report.anchor_check}")
    if report.plaintext_check is not None:
        print(f"plaintext_check:     {report.plaintext_check}")
    if record.receipt:
        print(f"verification_link:   {record.receipt.verification_link}")
        print(f"anchored_digest:     {record.receipt.anchored_digest.hex()}")
        print(f"anchored_at:         {record.receipt.timestamp_utc}")
    print()
    print("recompute the anchored combined hash by hand:")
    print(f"  h = sha512( hex(H(m)) + \"{COMBINED_HASH_DELIMITER}\" + hex(H(c)) )"
          "   # lowercase hex, ASCII")
    print(f"  H(m) = {record.plaintext_digest.hex()}")
    print(f"  H(c) = {report.ciphertext_digest_actual.hex()}  (recomputed from storage)")
    print(f"  h    = {report.combined_hash_value.hex()}")
    context = record.receipt.batch_context if record.receipt else None
    if isinstance(context, MerkleBatchContext):
        print("  batched anchor: fold h up this inclusion path "
              "(node = sha512(0x01 || left || right), leaf = sha512(0x00 || h)):")
        for line in context.proof.to_text().splitlines():
            print(f"    {line}")
        print(f"    root {context.root.hex()}")
    elif isinstance(context, ConcatBatchContext):
        print(f"  batched anchor: h is pair #{context.index} of a "
              f"{len(context.pairs)}-pair concatenated batch; recompute the "
              "anchored digest from all pairs in order")

    if report.failed:
        return EXIT_INTEGRITY
    if report.anchor_check == CHECK_PENDING:
        return EXIT_PENDING
    return EXIT_OK


def cmd_audit(args) -> int:
    config = _config(args)
    engine = build_engine(config)
    ok = True

    provider = engine.anchors.provider
    if isinstance(provider, LocalLedgerProvider):
        audit = provider.audit()
        if audit.ok:
            print(f"ledger: ok ({audit.entries} entries)")
        else:
            print(f"ledger: FAIL at seq {audit.first_bad_seq}: {audit.detail}")
            ok = False
    else:
        print("ledger: skipped (remote anchor provider)")

    anchored = 0
    ledger_digests = set()
    for record in engine.records.records():
        if record.receipt is None:
            print(f"receipt: {record.file_id} pending")
            continue
        anchored += 1
        expected = file_combined_hash(
            record.plaintext_digest, record.ciphertext_digest
        )
        if engine.anchors.verify_receipt(record.receipt, expected):
            ledger_digests.add(bytes(record.receipt.anchored_digest))
        else:
            print(f"receipt: {record.file_id} FAIL "
                  f"({record.receipt.verification_link})")
            ok = False
    print(f"receipts: {anchored} anchored records checked")

    # Ledger entries must all be accounted for by some record's receipt;
    # an orphan means record log lines went missing after anchoring.
    if isinstance(provider, LocalLedgerProvider):
        seq = 0
        while True:
            resolved = provider.resolve(f"local://ledger/{seq}")
            if resolved is None:
                break
            digest, _ts = resolved
            if bytes(digest) not in ledger_digests:
                print(f"cross-check: ledger seq {seq} not referenced by any record")
                ok = False
            seq += 1

    print("audit: " + ("ok" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_INTEGRITY


def cmd_flush(args) -> int:
    engine = build_engine(_config(args))
    result = engine.flush_anchors()
    if result.flushed == 0:
        print("no pending digests")
    else:
        link = (
            result.batch_receipt.verification_link
            if result.batch_receipt
            else "per-file receipts"
        )
        print(f"anchored {result.flushed} pending digest(s): {link}")
    return EXIT_OK


def cmd_export(args) -> int:
    engine = build_engine(_config(args))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as out:
            count = engine.records.export(out)
        print(f"exported {count} records to {args.out}", file=sys.stderr)
    else:
        engine.records.export(sys.stdout)
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [parse_size(s) for s in args.sizes.split(",") if s.strip()]
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    with tempfile.TemporaryDirectory(prefix="vaultstamp-bench-") as workdir:
        config = load_config(root=os.path.join(workdir, "archive"))
        engine = build_engine(config, upload_workers=args.concurrency)
        samples = benchmod.run_benchmark(
            engine,
            sizes,
            kinds=kinds,
            repeats=args.repeats,
            seed=args.seed,
            content_dir=os.path.join(workdir, "content"),
        )
    if args.raw:
        with open(args.raw, "w", encoding="utf-8") as fh:
            fh.write(benchmod.render_raw_csv(samples))
        print(f"raw samples written to {args.raw}", file=sys.stderr)
    sys.stdout.write(benchmod.render_summary_csv(samples))
    return EXIT_OK


def cmd_serve(args) -> int:
    config = _config(args)
    engine = build_engine(config, upload_workers=args.workers)
    interval = (
        config.batch_interval_seconds if config.anchor_mode != "immediate" else 0.0
    )
    service = ArchiveService(
        engine,
        host=args.host,
        port=args.port,
        api_token=config.api_token,
        flush_interval=interval,
    )
    print(f"serving on {service.url} (Ctrl-C to stop)", file=sys.stderr)
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vaultstamp",
        description="Encrypt, archive, and timestamp-anchor confidential files.",
    )
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--root", help="base directory for repo/logs (default ./archive)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upload", help="encrypt and archive files")
    p.add_argument("dataset")
    p.add_argument("paths", nargs="+")
    p.add_argument("--title", default="")
    p.add_argument("--password-prompt", action="store_true")
    p.add_argument("--escrow", action="store_true",
                   help="also split each file key into two escrow shares")
    p.add_argument("--share-a-out", help="path to write the first share file")
    p.add_argument("--share-b-out", help="path to write the second share file")
    p.set_defaults(func=cmd_upload)

    p = sub.add_parser("download", help="decrypt an archived file")
    p.add_argument("file_id")
    p.add_argument("--out", required=True)
    p.add_argument("--password-prompt", action="store_true")
    p.add_argument("--shares", nargs=2, metavar=("SHARE_A", "SHARE_B"),
                   help="two share files instead of a password")
    p.set_defaults(func=cmd_download)

    p = sub.add_parser("verify", help="audit an archived file")
    p.add_argument("file_id")
    p.add_argument("--plaintext", help="original file, to verify H(m) as well")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("audit", help="replay the ledger and check all receipts")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("flush", help="anchor all pending digests now")
    p.set_defaults(func=cmd_flush)

    p = sub.add_parser("export", help="dump all records as JSON lines")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("bench", help="time the upload pipeline per stage")
    p.add_argument("--sizes", default="1MB,10MB,100MB")
    p.add_argument("--format", "--kinds", dest="kinds", default="tabular,binary",
                   help="content kinds to generate: tabular, binary, or both")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--raw", help="also write per-repeat samples CSV here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8434)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AuthenticationError, IntegrityAlarmError, LedgerCorruptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except VaultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPERATIONAL


if __name__ == "__main__":
    sys.exit(main())
