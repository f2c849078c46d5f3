"""Command-line interface.

One executable with subcommands for the data-owner workflow (keygen,
encrypt, verify) and the local evaluation harnesses (attack, leakage,
probe).  Exit codes: 0 success, 1 usage error, 2 data/config error,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import traceback
from pathlib import Path

from .attacks import leakage_report, match_plain_encrypted
from .dataset_io import (
    MANIFEST_NAME,
    DatasetManifest,
    encrypt_dataset,
    peek_geometry,
)
from .encoder import SCHEME_IMAGE, SCHEMES, EncoderConfig
from .errors import NeuracodecError
from .keying import MasterKey, keystream, parse_key, read_key_file, write_key_file

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

KEY_ENV_VAR = "NEURACODEC_KEY"


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this tool reserves 2
    # for data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _UsageError(Exception):
    pass


def _resolve_key(args) -> MasterKey:
    """--key file wins; NEURACODEC_KEY holds the hex key itself."""
    if args.key is not None:
        return read_key_file(args.key)
    env = os.environ.get(KEY_ENV_VAR)
    if env:
        return parse_key(env.strip())
    raise _UsageError(f"a key is required: pass --key FILE or set {KEY_ENV_VAR}")


def _emit_json(payload: dict, out_path) -> None:
    text = json.dumps(payload, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_keygen(args) -> int:
    path = Path(args.out)
    if path.exists() and not args.force:
        print(f"error: {path} exists (pass --force to overwrite)", file=sys.stderr)
        return EXIT_DATA
    write_key_file(path, MasterKey.generate(), force=args.force)
    print(str(path))
    return EXIT_OK


def cmd_encrypt(args) -> int:
    key = _resolve_key(args)
    channels, height, width = peek_geometry(args.src)
    config = EncoderConfig(
        scheme=args.scheme,
        channels=channels,
        height=height,
        width=width,
        patch_size=args.patch,
        hidden_width=args.hidden,
        depth=args.depth,
    )
    encrypt_dataset(
        args.src,
        key,
        config,
        args.out,
        jobs=args.jobs,
        export_pngs=args.png,
        keep_perms=args.keep_perm,
        nondeterministic_shuffle=args.nondeterministic_shuffle,
    )
    print(str(Path(args.out) / MANIFEST_NAME))
    return EXIT_OK


def cmd_attack(args) -> int:
    report = match_plain_encrypted(args.plain, args.enc)
    _emit_json(report.to_dict(), args.out)
    return EXIT_OK


def cmd_leakage(args) -> int:
    _emit_json(leakage_report(args.plain, args.enc), args.out)
    return EXIT_OK


def cmd_probe(args) -> int:
    from .probe import utility_experiment  # defers the scikit-learn import

    key = _resolve_key(args)
    settings = dict(
        n_classes=args.classes,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        channels=args.channels,
        height=args.height,
        width=args.width,
        patch_size=args.patch,
        hidden_width=args.hidden,
        depth=args.depth,
        epochs=args.epochs,
        lr=args.lr,
        noise_sigma=args.noise_sigma,
    )
    if args.repeats <= 1:
        _emit_json(utility_experiment(key, **settings), args.out)
        return EXIT_OK
    stream = keystream(key, "probe.rep")
    runs = [
        utility_experiment(MasterKey(stream.read(32)), **settings)
        for _ in range(args.repeats)
    ]
    medians = {
        field: statistics.median(r[field] for r in runs)
        for field in ("plain_acc", "color_acc", "neuracrypt_acc", "shuffled_label_acc")
    }
    _emit_json(
        {"repeats": args.repeats, "runs": runs, "medians": medians}, args.out
    )
    return EXIT_OK


def cmd_verify(args) -> int:
    key = _resolve_key(args)
    manifest_path = (
        Path(args.manifest) if args.manifest else Path(args.enc) / MANIFEST_NAME
    )
    manifest = DatasetManifest.load(manifest_path)
    if manifest.matches_key(key):
        print(json.dumps({"match": True, "key_fingerprint": manifest.key_fingerprint}))
        return EXIT_OK
    print(
        f"error: key fingerprint {key.fingerprint()} does not match manifest "
        f"{manifest.key_fingerprint}",
        file=sys.stderr,
    )
    return EXIT_DATA


def _add_key_option(parser) -> None:
    parser.add_argument(
        "--key",
        metavar="FILE",
        default=None,
        help=f"key file (64 hex chars); ${KEY_ENV_VAR} is used when omitted",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="neuracodec",
        description="Keyed random-network image encryption and evaluation harnesses.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keygen", help="write a fresh random key file")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("encrypt", help="encrypt an image directory")
    _add_key_option(p)
    p.add_argument("--scheme", required=True, choices=SCHEMES)
    p.add_argument("--in", dest="src", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--patch", type=int, default=16, help="patch size (default 16)")
    p.add_argument("--depth", type=int, default=4, help="hidden blocks (default 4)")
    p.add_argument("--hidden", type=int, default=768, help="hidden width (default 768)")
    p.add_argument(
        "--png",
        action="store_true",
        help=f"also export quantized PNGs (scheme {SCHEME_IMAGE} only)",
    )
    p.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    p.add_argument(
        "--keep-perm",
        action="store_true",
        help="record per-image patch permutations in the manifest (testing)",
    )
    p.add_argument(
        "--nondeterministic-shuffle",
        action="store_true",
        help="draw patch permutations from OS entropy instead of the key",
    )
    p.set_defaults(func=cmd_encrypt)

    p = sub.add_parser("attack", help="plain/encrypted matching attack")
    p.add_argument("--plain", required=True, metavar="DIR")
    p.add_argument("--enc", required=True, metavar="DIR")
    p.add_argument("--out", default=None, metavar="FILE", help="write JSON here")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("leakage", help="leakage metrics report")
    p.add_argument("--plain", required=True, metavar="DIR")
    p.add_argument("--enc", required=True, metavar="DIR")
    p.add_argument("--out", default=None, metavar="FILE", help="write JSON here")
    p.set_defaults(func=cmd_leakage)

    p = sub.add_parser("probe", help="linear-probe utility experiment")
    _add_key_option(p)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--train-per-class", type=int, default=100)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--hidden", type=int, default=192)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", default=None, metavar="FILE", help="write JSON here")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("verify", help="check a manifest against a key")
    _add_key_option(p)
    p.add_argument("--enc", default=None, metavar="DIR")
    p.add_argument("--manifest", default=None, metavar="FILE")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # includes --help (0) and usage errors (1)
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NeuracodecError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
