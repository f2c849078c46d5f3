"""Keyed random-network image encryption pipelines.

Two schemes share one forward pass over per-patch token rows:

* ``neuracrypt``: output is the token matrix itself, with the rows
  permuted by a fresh keyed permutation per image.
* ``color``: output is an image again; the token matrix (one row of
  C*p*p values per patch) is reassembled into the input geometry, and
  no row permutation is applied.

The forward pass is patch embedding -> depth x (per-token affine +
ReLU) -> additive position embedding -> linear projection.  Every stage
acts on each token row independently, so the pipeline never mixes
patches, and all accumulation is float32 in ascending input-index order
so that re-encryption is bit-identical across runs and thread counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .keying import (
    MasterKey,
    OsEntropyStream,
    keystream,
    sample_gaussian,
    sample_permutation,
)

SCHEME_TOKENS = "neuracrypt"
SCHEME_IMAGE = "color"
SCHEMES = (SCHEME_TOKENS, SCHEME_IMAGE)

# Parameter-group stream labels, in derivation order.
LABEL_PATCH_EMBED = "patch_embed.w"
LABEL_POS_EMBED = "pos_embed"
LABEL_PROJECTION = "proj.w"


def block_label(index: int) -> str:
    """Stream label for hidden block ``index`` (1-based)."""
    return f"block.{index}.w"


def perm_label(image_index: int) -> str:
    """Stream label for the patch permutation of one image."""
    return f"patch_perm.{image_index}"


@dataclass(frozen=True)
class EncoderConfig:
    """Geometry and width settings; fully determines all weight shapes.

    ``output_dim`` and ``patch_shuffle`` may be left as None and are then
    resolved from the scheme: the image scheme forces ``output_dim`` to
    channels*patch_size^2 and never shuffles, the token scheme defaults
    ``output_dim`` to ``hidden_width`` and shuffles by default.
    """

    scheme: str = SCHEME_TOKENS
    channels: int = 3
    height: int = 224
    width: int = 224
    patch_size: int = 16
    hidden_width: int = 768
    depth: int = 4
    output_dim: int | None = None
    patch_shuffle: bool | None = None

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigError(
                f"scheme must be one of {SCHEMES}, got {self.scheme!r}"
            )
        for name in ("channels", "height", "width", "patch_size", "hidden_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.depth < 0:
            raise ConfigError(f"depth must be >= 0, got {self.depth}")
        if self.height % self.patch_size != 0 or self.width % self.patch_size != 0:
            raise ConfigError(
                f"patch_size {self.patch_size} must divide height {self.height} "
                f"and width {self.width}"
            )
        patch_dim = self.channels * self.patch_size * self.patch_size
        if self.scheme == SCHEME_IMAGE:
            if self.output_dim is None:
                object.__setattr__(self, "output_dim", patch_dim)
            elif self.output_dim != patch_dim:
                raise ConfigError(
                    f"scheme {SCHEME_IMAGE!r} requires output_dim == "
                    f"channels*patch_size^2 = {patch_dim}, got {self.output_dim}"
                )
            if self.patch_shuffle is None:
                object.__setattr__(self, "patch_shuffle", False)
            elif self.patch_shuffle:
                raise ConfigError(
                    f"scheme {SCHEME_IMAGE!r} does not permit patch shuffling"
                )
        else:
            if self.output_dim is None:
                object.__setattr__(self, "output_dim", self.hidden_width)
            elif self.output_dim < 1:
                raise ConfigError(f"output_dim must be >= 1, got {self.output_dim}")
            if self.patch_shuffle is None:
                object.__setattr__(self, "patch_shuffle", True)

    @property
    def grid_height(self) -> int:
        return self.height // self.patch_size

    @property
    def grid_width(self) -> int:
        return self.width // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid_height * self.grid_width

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "channels": self.channels,
            "height": self.height,
            "width": self.width,
            "patch_size": self.patch_size,
            "hidden_width": self.hidden_width,
            "depth": self.depth,
            "output_dim": self.output_dim,
            "patch_shuffle": self.patch_shuffle,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass(frozen=True)
class EncoderWeights:
    """All derived network parameters; immutable after derivation."""

    patch_w: np.ndarray  # (hidden, patch_dim)
    patch_b: np.ndarray  # (hidden,)
    block_w: tuple  # depth x (hidden, hidden)
    block_b: tuple  # depth x (hidden,)
    pos: np.ndarray  # (n_patches, hidden)
    proj_w: np.ndarray  # (output_dim, hidden)
    proj_b: np.ndarray  # (output_dim,)

    def __post_init__(self) -> None:
        for arr in (self.patch_w, self.patch_b, self.pos, self.proj_w,
                    self.proj_b, *self.block_w, *self.block_b):
            arr.flags.writeable = False


def build_weights(key: MasterKey, config: EncoderConfig) -> EncoderWeights:
    """Derive the full weight set from (key, config).

    Entry distributions: patch embedding N(0, 2/patch_dim), hidden blocks
    N(0, 2/hidden), projection N(0, 1/hidden), position embedding N(0, 1),
    all biases zero.  Each group reads its own labelled stream
    (patch_embed.w, block.1.w .. block.depth.w, pos_embed, proj.w), so
    groups can be derived independently and in parallel.
    """
    pd, dh = config.patch_dim, config.hidden_width
    n, dout = config.n_patches, config.output_dim

    def gauss(label: str, count: int, std: float) -> np.ndarray:
        return sample_gaussian(keystream(key, label), count, 0.0, std)

    patch_w = gauss(LABEL_PATCH_EMBED, dh * pd, math.sqrt(2.0 / pd)).reshape(dh, pd)
    block_w = tuple(
        gauss(block_label(i), dh * dh, math.sqrt(2.0 / dh)).reshape(dh, dh)
        for i in range(1, config.depth + 1)
    )
    pos = gauss(LABEL_POS_EMBED, n * dh, 1.0).reshape(n, dh)
    proj_w = gauss(LABEL_PROJECTION, dout * dh, math.sqrt(1.0 / dh)).reshape(dout, dh)
    return EncoderWeights(
        patch_w=patch_w,
        patch_b=np.zeros(dh, dtype=np.float32),
        block_w=block_w,
        block_b=tuple(np.zeros(dh, dtype=np.float32) for _ in block_w),
        pos=pos,
        proj_w=proj_w,
        proj_b=np.zeros(dout, dtype=np.float32),
    )


def identity_weights(config: EncoderConfig) -> EncoderWeights:
    """Weight set that makes the encoder the identity map on token rows.

    Testing hook, not reachable from the CLI.  Requires depth 0 and
    hidden_width == output_dim == patch_dim so the matrices are square.
    """
    pd = config.patch_dim
    if config.depth != 0 or config.hidden_width != pd or config.output_dim != pd:
        raise ConfigError(
            "identity weights need depth=0 and hidden_width == output_dim == "
            f"patch_dim ({pd}); got depth={config.depth}, "
            f"hidden_width={config.hidden_width}, output_dim={config.output_dim}"
        )
    eye = np.eye(pd, dtype=np.float32)
    return EncoderWeights(
        patch_w=eye.copy(),
        patch_b=np.zeros(pd, dtype=np.float32),
        block_w=(),
        block_b=(),
        pos=np.zeros((config.n_patches, pd), dtype=np.float32),
        proj_w=eye.copy(),
        proj_b=np.zeros(pd, dtype=np.float32),
    )


def extract_patches(img: np.ndarray, patch_size: int) -> np.ndarray:
    """Slice a C x H x W image into rows of flattened patches.

    Row k (row-major patch order, k = gy*(W/p) + gx) holds the patch at
    grid (gy, gx), flattened channel-major then row-major within the
    patch.  Lossless; inverted by :func:`reassemble_patches`.
    """
    img = np.asarray(img)
    if img.ndim != 3:
        raise ConfigError(f"expected a C x H x W image, got shape {img.shape}")
    c, h, w = img.shape
    p = patch_size
    if h % p != 0 or w % p != 0:
        raise ConfigError(f"patch size {p} must divide image dims {h} x {w}")
    gh, gw = h // p, w // p
    rows = img.reshape(c, gh, p, gw, p).transpose(1, 3, 0, 2, 4)
    return rows.reshape(gh * gw, c * p * p)


def reassemble_patches(
    rows: np.ndarray, channels: int, height: int, width: int, patch_size: int
) -> np.ndarray:
    """Exact inverse of :func:`extract_patches` for the same geometry."""
    rows = np.asarray(rows)
    p = patch_size
    if height % p != 0 or width % p != 0:
        raise ConfigError(f"patch size {p} must divide image dims {height} x {width}")
    gh, gw = height // p, width // p
    expected = (gh * gw, channels * p * p)
    if rows.ndim != 2 or rows.shape != expected:
        raise ConfigError(
            f"row matrix shape {rows.shape} inconsistent with geometry "
            f"{channels} x {height} x {width}, patch {p} (expected {expected})"
        )
    img = rows.reshape(gh, gw, channels, p, p).transpose(2, 0, 3, 1, 4)
    return img.reshape(channels, height, width)


def _affine_rows(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w.T + b with bit-reproducible arithmetic.

    Every output element accumulates in strictly ascending input-index
    order, entirely in float32, independent of batching or thread count.
    """
    out_dim, in_dim = w.shape
    if x.shape[1] != in_dim:
        raise ValueError(
            f"input width {x.shape[1]} does not match weight shape {w.shape}"
        )
    wt = np.ascontiguousarray(w.T)
    acc = np.empty((x.shape[0], out_dim), dtype=np.float32)
    acc[:] = b
    tmp = np.empty_like(acc)
    for j in range(in_dim):
        np.multiply(x[:, j, None], wt[j], out=tmp)
        np.add(acc, tmp, out=acc)
    return acc


def forward_tokens(patches: np.ndarray, weights: EncoderWeights) -> np.ndarray:
    """Run the random network over patch rows, producing one token per patch.

    Per row x: h = relu(W0 x + b0); then each hidden block h = relu(W h + b);
    then h += position row; finally out = Wf h + bf (no activation).
    """
    patches = np.ascontiguousarray(patches, dtype=np.float32)
    if patches.ndim != 2:
        raise ValueError(f"expected a 2-d patch matrix, got shape {patches.shape}")
    n = patches.shape[0]
    if weights.pos.shape[0] != n:
        raise ValueError(
            f"position embedding holds {weights.pos.shape[0]} rows, input has {n}"
        )
    h = _affine_rows(patches, weights.patch_w, weights.patch_b)
    np.maximum(h, 0.0, out=h)
    for w, b in zip(weights.block_w, weights.block_b):
        h = _affine_rows(h, w, b)
        np.maximum(h, 0.0, out=h)
    np.add(h, weights.pos, out=h)
    return _affine_rows(h, weights.proj_w, weights.proj_b)


def shuffle_patches(tokens: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Permute token rows: out[i] = tokens[perm[i]]."""
    tokens = np.asarray(tokens)
    perm = np.asarray(perm)
    if perm.shape != (tokens.shape[0],):
        raise ValueError(
            f"permutation length {perm.shape} does not match token count "
            f"{tokens.shape[0]}"
        )
    counts = np.bincount(perm, minlength=tokens.shape[0])
    if not np.all(counts == 1):
        raise ValueError("permutation is not a bijection on row indices")
    return tokens[perm]


@dataclass(frozen=True)
class EncryptedSample:
    """One encrypted image: a token matrix or an image, per scheme."""

    data: np.ndarray
    scheme: str
    permutation: np.ndarray | None = None


def _check_plain_image(img: np.ndarray, config: EncoderConfig) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    expected = (config.channels, config.height, config.width)
    if img.shape != expected:
        raise ConfigError(
            f"image shape {img.shape} does not match configured geometry {expected}"
        )
    if not np.all(np.isfinite(img)):
        raise ValueError("plain image contains non-finite values")
    lo, hi = float(img.min()), float(img.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(
            f"plain values must lie in [0, 1]; found range [{lo:g}, {hi:g}] "
            "(refusing to clamp)"
        )
    return img


def encrypt_with_weights(
    img: np.ndarray,
    weights: EncoderWeights,
    config: EncoderConfig,
    *,
    perm: np.ndarray | None = None,
    keep_perm: bool = False,
) -> EncryptedSample:
    """Encrypt one image with pre-derived (possibly injected) weights.

    This is the injection hook used by tests to run identity or zero
    configurations; normal callers go through :func:`encrypt`.
    """
    img = _check_plain_image(img, config)
    tokens = forward_tokens(extract_patches(img, config.patch_size), weights)
    if config.scheme == SCHEME_IMAGE:
        data = reassemble_patches(
            tokens, config.channels, config.height, config.width, config.patch_size
        )
        return EncryptedSample(data=data, scheme=config.scheme)
    if perm is not None:
        tokens = shuffle_patches(tokens, perm)
    return EncryptedSample(
        data=tokens,
        scheme=config.scheme,
        permutation=perm if keep_perm else None,
    )


def draw_patch_permutation(
    key: MasterKey,
    config: EncoderConfig,
    image_index: int,
    *,
    nondeterministic: bool = False,
) -> np.ndarray | None:
    """Per-image patch permutation, or None when the scheme does not shuffle.

    Keyed by default so re-encryption reproduces it; ``nondeterministic``
    draws from OS entropy instead, making the shuffle unrecoverable.
    """
    if not config.patch_shuffle:
        return None
    stream = (
        OsEntropyStream()
        if nondeterministic
        else keystream(key, perm_label(image_index))
    )
    return sample_permutation(stream, config.n_patches)


def encrypt(
    img: np.ndarray,
    key: MasterKey,
    config: EncoderConfig,
    image_index: int = 0,
    *,
    keep_perm: bool = False,
    nondeterministic_shuffle: bool = False,
) -> EncryptedSample:
    """Encrypt one plain image (values in [0, 1]) under (key, config)."""
    weights = build_weights(key, config)
    perm = draw_patch_permutation(
        key, config, image_index, nondeterministic=nondeterministic_shuffle
    )
    return encrypt_with_weights(img, weights, config, perm=perm, keep_perm=keep_perm)
