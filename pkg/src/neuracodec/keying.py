"""Deterministic key-derived randomness.

Every random parameter in the toolkit (weights, position embeddings,
per-image permutations) is drawn from a labelled ChaCha20 keystream, so
any party holding the 32-byte master key re-derives bit-identical values
in any process and on any platform.  Distinct labels give computationally
independent streams; the label string is the only thing that separates
one parameter group from another.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .errors import KeyFormatError

KEY_BYTES = 32
_U32_SPAN = 2**32
_HEX_DIGITS = set("0123456789abcdefABCDEF")


@dataclass(frozen=True)
class MasterKey:
    """256-bit secret from which every random parameter is derived."""

    data: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.data, bytes) or len(self.data) != KEY_BYTES:
            raise KeyFormatError(
                f"master key must be exactly {KEY_BYTES} bytes, got "
                f"{len(self.data) if isinstance(self.data, bytes) else type(self.data).__name__}"
            )

    @classmethod
    def generate(cls) -> "MasterKey":
        """Fresh key from OS entropy."""
        return cls(os.urandom(KEY_BYTES))

    def hex(self) -> str:
        return self.data.hex()

    def fingerprint(self) -> str:
        """SHA-256 of the key bytes; safe to persist in manifests."""
        return hashlib.sha256(self.data).hexdigest()

    def __repr__(self) -> str:
        # The key itself must never end up in logs or tracebacks.
        return f"MasterKey(fingerprint={self.fingerprint()[:12]})"


def parse_key(text: str) -> MasterKey:
    """Decode a 64-hex-character key string (case-insensitive)."""
    if len(text) != 2 * KEY_BYTES:
        raise KeyFormatError(
            f"key must be {2 * KEY_BYTES} hex characters, got {len(text)}"
        )
    for pos, ch in enumerate(text):
        if ch not in _HEX_DIGITS:
            raise KeyFormatError(f"invalid hex digit {ch!r} at position {pos}")
    return MasterKey(bytes.fromhex(text))


def read_key_file(path) -> MasterKey:
    """Read a key file: one line of 64 hex chars, trailing newline optional."""
    with open(path, "r", encoding="ascii") as fh:
        line = fh.readline()
    return parse_key(line.strip())


def write_key_file(path, key: MasterKey, *, force: bool = False) -> None:
    """Write the key as hex, mode 0600 where the platform supports it."""
    flags = os.O_WRONLY | os.O_CREAT | (os.O_TRUNC if force else os.O_EXCL)
    fd = os.open(str(path), flags, 0o600)
    try:
        os.write(fd, (key.hex() + "\n").encode("ascii"))
    finally:
        os.close(fd)


class KeyStream:
    """Unbounded deterministic byte stream for one (key, label) pair.

    The stream is the ChaCha20 keystream whose cipher key is the master
    key and whose 12-byte nonce is the first 12 bytes of SHA-256(label).
    Streams are single-consumer: reads advance an internal offset.
    """

    def __init__(self, key: MasterKey, label: str):
        try:
            encoded = label.encode("ascii")
        except UnicodeEncodeError as exc:
            raise ValueError(f"domain label must be ASCII: {label!r}") from exc
        nonce = hashlib.sha256(encoded).digest()[:12]
        # cryptography's ChaCha20 takes counter||nonce; start at counter 0.
        cipher = Cipher(algorithms.ChaCha20(key.data, b"\x00" * 4 + nonce), mode=None)
        self._encryptor = cipher.encryptor()
        self.label = label

    def read(self, n: int) -> bytes:
        return self._encryptor.update(bytes(n))


class OsEntropyStream:
    """Drop-in stream reading from OS entropy; intentionally irreproducible."""

    def read(self, n: int) -> bytes:
        return os.urandom(n)


def keystream(key: MasterKey, label: str) -> KeyStream:
    """Deterministic stream for (key, label); same pair, same bytes, always."""
    return KeyStream(key, label)


def sample_uniform(stream) -> float:
    """One uniform draw in [0, 1): 4 stream bytes as little-endian u32 / 2^32."""
    v = int.from_bytes(stream.read(4), "little")
    return v / _U32_SPAN


def sample_gaussian(stream, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Draw n normal samples via Box-Muller on consecutive uniform pairs.

    Each pair of 4-byte uniforms yields two outputs (cos then sin branch);
    for odd n the final second output is discarded.  u1 is clamped to
    >= 2^-32 before the log.  Returns float32.
    """
    if n < 0:
        raise ValueError(f"sample count must be >= 0, got {n}")
    if std <= 0:
        raise ValueError(f"std must be > 0, got {std}")
    if n == 0:
        return np.zeros(0, dtype=np.float32)
    pairs = (n + 1) // 2
    raw = stream.read(8 * pairs)
    u = np.frombuffer(raw, dtype="<u4").astype(np.float64) / _U32_SPAN
    u1 = np.maximum(u[0::2], 2.0**-32)
    u2 = u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(2.0 * np.pi * u2)
    z[1::2] = radius * np.sin(2.0 * np.pi * u2)
    return (mean + std * z[:n]).astype(np.float32)


def sample_permutation(stream, n: int) -> np.ndarray:
    """Unbiased permutation of 0..n-1 via Fisher-Yates.

    Walks i from n-1 down to 1; each swap index is drawn by rejection
    sampling on 4-byte uniforms (reject v >= floor(2^32/(i+1))*(i+1),
    then v mod (i+1)), so no modulo bias.
    """
    if n < 1:
        raise ValueError(f"permutation length must be >= 1, got {n}")
    perm = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        m = i + 1
        bound = (_U32_SPAN // m) * m
        while True:
            v = int.from_bytes(stream.read(4), "little")
            if v < bound:
                break
        j = v % m
        perm[i], perm[j] = perm[j], perm[i]
    return perm
