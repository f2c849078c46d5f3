"""Dataset loading, portable tensor files, and provenance manifests.

Encrypted outputs are stored one tensor file per image in a small binary
format (magic ``NCT1``, u8 rank, little-endian u32 dims, float32 payload)
next to a ``manifest.json`` that binds them to the encoder configuration
and the key fingerprint, so train and test sets can be verified to use
the same keyed network without ever storing the key.
"""

from __future__ import annotations

import csv
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoder import (
    SCHEME_IMAGE,
    EncoderConfig,
    EncryptedSample,
    build_weights,
    draw_patch_permutation,
    encrypt_with_weights,
)
from .errors import DatasetError, TensorFileError
from .keying import MasterKey

TENSOR_MAGIC = b"NCT1"
TENSOR_SUFFIX = ".nct"
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
LABELS_FILE = "labels.csv"
IMAGE_SUFFIXES = (".png", ".ppm")


def save_tensor(x: np.ndarray, path) -> None:
    """Write a float32 tensor; bit-exact round trip with :func:`load_tensor`."""
    arr = np.asarray(x)
    if arr.ndim == 0:
        raise TensorFileError("rank-0 tensors are not supported")
    if not np.all(np.isfinite(arr)):
        raise TensorFileError("refusing to store non-finite values")
    header = TENSOR_MAGIC + struct.pack("<B", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != TENSOR_MAGIC:
        raise TensorFileError(
            f"{path}: bad magic at byte 0 (expected {TENSOR_MAGIC!r})"
        )
    if len(data) < 5:
        raise TensorFileError(f"{path}: truncated header at byte 4 (missing rank)")
    rank = data[4]
    if rank == 0:
        raise TensorFileError(f"{path}: rank 0 is not a valid tensor")
    dims_end = 5 + 4 * rank
    if len(data) < dims_end:
        raise TensorFileError(
            f"{path}: truncated dimension list at byte {len(data)} "
            f"(need {dims_end} bytes)"
        )
    dims = struct.unpack(f"<{rank}I", data[5:dims_end])
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    actual = len(data) - dims_end
    if actual != expected:
        raise TensorFileError(
            f"{path}: payload length {actual} at byte {dims_end} does not match "
            f"dims {dims} (expected {expected} bytes)"
        )
    return np.frombuffer(data, dtype="<f4", offset=dims_end).reshape(dims).copy()


def _ppm_maxval(path) -> int | None:
    """Maxval from a raw PPM/PGM header; None if the header is not parseable."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(256)
    except OSError:
        return None
    fields: list[bytes] = []
    token = b""
    i = 2  # skip magic
    while i < len(head) and len(fields) < 3:
        ch = head[i : i + 1]
        if ch == b"#":
            while i < len(head) and head[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            if token:
                fields.append(token)
                token = b""
        else:
            token += ch
        i += 1
    if len(fields) < 3:
        return None
    try:
        return int(fields[2])
    except ValueError:
        return None


def load_image(path) -> np.ndarray:
    """Load an 8-bit PNG or binary PPM as a channel-major float tensor.

    Each sample is value/255; grayscale loads with a single channel.
    """
    try:
        with Image.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt not in ("PNG", "PPM"):
                raise DatasetError(
                    f"{path}: unsupported image format {fmt!r} (only 8-bit PNG "
                    "and binary PPM are readable)"
                )
            if mode not in ("L", "RGB"):
                raise DatasetError(
                    f"{path}: unsupported {fmt} variant (mode {mode!r}); only "
                    "8-bit grayscale or RGB is readable"
                )
            if fmt == "PPM":
                maxval = _ppm_maxval(path)
                if maxval is None or maxval > 255:
                    raise DatasetError(
                        f"{path}: unsupported PPM bit depth (maxval "
                        f"{maxval}); only 8-bit P6/P5 is readable"
                    )
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except UnidentifiedImageError as exc:
        raise DatasetError(f"{path}: not a recognizable image file") from exc
    if arr.ndim == 2:
        return arr[None, :, :]
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def export_png(img: np.ndarray, lo: float, hi: float, path) -> None:
    """Quantize an encrypted image to an 8-bit PNG for visualization only.

    Samples map through round-half-up((v - lo) / (hi - lo) * 255), clamped
    to [0, 255].  Lossy by design; the stored tensors are untouched.
    """
    if not hi > lo:
        raise ValueError(f"require hi > lo, got lo={lo}, hi={hi}")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(
            f"PNG export supports 1- or 3-channel images, got shape {arr.shape}"
        )
    q = np.floor((arr - lo) / (hi - lo) * 255.0 + 0.5)
    q = np.clip(q, 0.0, 255.0).astype(np.uint8)
    if q.shape[0] == 1:
        Image.fromarray(q[0], mode="L").save(path)
    else:
        Image.fromarray(q.transpose(1, 2, 0), mode="RGB").save(path)


@dataclass
class SampleEntry:
    source: str
    output: str
    image_index: int
    label: str | None = None
    permutation: list[int] | None = None

    def to_dict(self) -> dict:
        d = {
            "source": self.source,
            "output": self.output,
            "image_index": self.image_index,
            "label": self.label,
        }
        if self.permutation is not None:
            d["permutation"] = self.permutation
        return d


@dataclass
class DatasetManifest:
    """Provenance record binding encrypted outputs to (config, key fingerprint)."""

    scheme: str
    config: EncoderConfig
    key_fingerprint: str
    value_min: float
    value_max: float
    samples: list[SampleEntry] = field(default_factory=list)
    created_utc: str = ""
    format_version: int = MANIFEST_VERSION

    def __post_init__(self) -> None:
        if self.scheme != self.config.scheme:
            raise DatasetError(
                f"manifest scheme {self.scheme!r} disagrees with config "
                f"scheme {self.config.scheme!r}"
            )
        if self.value_min > self.value_max:
            raise DatasetError(
                f"manifest value range is inverted: min {self.value_min} > "
                f"max {self.value_max}"
            )
        indices = sorted(s.image_index for s in self.samples)
        if indices != list(range(len(self.samples))):
            raise DatasetError(
                "manifest image_index values must be unique and contiguous from 0"
            )

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "scheme": self.scheme,
            "config": self.config.to_dict(),
            "key_fingerprint": self.key_fingerprint,
            "created_utc": self.created_utc,
            "value_min": self.value_min,
            "value_max": self.value_max,
            "samples": [s.to_dict() for s in self.samples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        version = d.get("format_version")
        if version != MANIFEST_VERSION:
            raise DatasetError(f"unsupported manifest format_version {version!r}")
        samples = [
            SampleEntry(
                source=s["source"],
                output=s["output"],
                image_index=s["image_index"],
                label=s.get("label"),
                permutation=s.get("permutation"),
            )
            for s in d["samples"]
        ]
        return cls(
            scheme=d["scheme"],
            config=EncoderConfig.from_dict(d["config"]),
            key_fingerprint=d["key_fingerprint"],
            value_min=d["value_min"],
            value_max=d["value_max"],
            samples=samples,
            created_utc=d.get("created_utc", ""),
            format_version=version,
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read manifest {path}: {exc}") from exc

    def matches_key(self, key: MasterKey) -> bool:
        return self.key_fingerprint == key.fingerprint()


def read_labels(src_dir) -> dict[str, str]:
    """Optional ``labels.csv`` (header ``name,label``) in the source dir."""
    path = Path(src_dir) / LABELS_FILE
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != [
            "name",
            "label",
        ]:
            raise DatasetError(
                f"{path}: expected header 'name,label', got {reader.fieldnames}"
            )
        return {row["name"]: row["label"] for row in reader}


def list_images(src_dir) -> list[Path]:
    src = Path(src_dir)
    if not src.is_dir():
        raise DatasetError(f"{src}: not a directory")
    return sorted(
        (p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )


def peek_geometry(src_dir) -> tuple[int, int, int]:
    """(channels, height, width) of the lexicographically first image."""
    files = list_images(src_dir)
    if not files:
        raise DatasetError(f"{src_dir}: no PNG/PPM images found")
    c, h, w = load_image(files[0]).shape
    return c, h, w


def encrypt_dataset(
    src_dir,
    key: MasterKey,
    config: EncoderConfig,
    dst_dir,
    *,
    jobs: int = 1,
    export_pngs: bool = False,
    keep_perms: bool = False,
    nondeterministic_shuffle: bool = False,
) -> DatasetManifest:
    """Encrypt every image in ``src_dir`` and write tensors + manifest.

    image_index follows lexicographic source-name order, which is what
    makes per-image permutations reproducible across machines.  Worker
    count never changes the output bytes: each image's encryption is
    self-contained and results are written in index order.
    """
    if export_pngs and config.scheme != SCHEME_IMAGE:
        raise DatasetError(
            f"PNG export requires image outputs (scheme {SCHEME_IMAGE!r}); "
            f"got scheme {config.scheme!r}"
        )
    files = list_images(src_dir)
    if not files:
        raise DatasetError(f"{src_dir}: no PNG/PPM images found")
    stems = [p.stem for p in files]
    dupes = {s for s in stems if stems.count(s) > 1}
    if dupes:
        raise DatasetError(
            f"{src_dir}: duplicate output stems would collide: {sorted(dupes)}"
        )
    images = [load_image(p) for p in files]
    expected = (config.channels, config.height, config.width)
    offenders = [f.name for f, im in zip(files, images) if im.shape != expected]
    if offenders:
        raise DatasetError(
            f"geometry mismatch: configured {expected}, offending files: "
            f"{offenders}"
        )
    labels = read_labels(src_dir)
    weights = build_weights(key, config)

    def encrypt_one(index: int) -> EncryptedSample:
        perm = draw_patch_permutation(
            key, config, index, nondeterministic=nondeterministic_shuffle
        )
        return encrypt_with_weights(
            images[index], weights, config, perm=perm, keep_perm=keep_perms
        )

    indices = range(len(files))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(encrypt_one, indices))
    else:
        samples = [encrypt_one(i) for i in indices]

    value_min = min(float(s.data.min()) for s in samples)
    value_max = max(float(s.data.max()) for s in samples)

    dst = Path(dst_dir)
    dst.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, (src_path, sample) in enumerate(zip(files, samples)):
        out_name = src_path.stem + TENSOR_SUFFIX
        save_tensor(sample.data, dst / out_name)
        if export_pngs:
            export_png(sample.data, value_min, value_max, dst / (src_path.stem + ".png"))
        entries.append(
            SampleEntry(
                source=src_path.name,
                output=out_name,
                image_index=index,
                label=labels.get(src_path.name),
                permutation=(
                    sample.permutation.tolist()
                    if sample.permutation is not None
                    else None
                ),
            )
        )
    manifest = DatasetManifest(
        scheme=config.scheme,
        config=config,
        key_fingerprint=key.fingerprint(),
        value_min=value_min,
        value_max=value_max,
        samples=entries,
        created_utc=datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    )
    manifest.save(dst / MANIFEST_NAME)
    return manifest


def load_encrypted_dataset(enc_dir) -> tuple[DatasetManifest, list[np.ndarray]]:
    """Manifest plus tensors in image_index order."""
    enc = Path(enc_dir)
    manifest = DatasetManifest.load(enc / MANIFEST_NAME)
    ordered = sorted(manifest.samples, key=lambda s: s.image_index)
    return manifest, [load_tensor(enc / s.output) for s in ordered]
