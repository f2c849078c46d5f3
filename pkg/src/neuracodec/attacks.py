"""Ciphertext matching attack and leakage metrics.

Identical patches at identical positions encrypt identically under a
fixed key, so the pattern of shared-patch collisions inside a dataset
survives encryption.  The attack fingerprints each sample by its row of
pairwise collision counts (sorted, so no correspondence is assumed),
builds a cost matrix between plain and encrypted fingerprints, and
solves the assignment exactly.  This is a deliberately simple member of
the known matching-attack family, not a reconstruction attack.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dataset_io import list_images, load_encrypted_dataset, load_image
from .encoder import SCHEME_IMAGE, SCHEME_TOKENS, EncoderConfig, extract_patches
from .errors import DatasetError

QUANTIZE_DECIMALS = 6


@dataclass(frozen=True)
class CollisionSignature:
    """Per-sample 64-bit patch-content hashes.

    ``positional`` signatures keep the patch index as part of the
    identity (hash k describes patch k); multiset signatures describe
    content only, for token outputs whose rows were shuffled.
    """

    hashes: np.ndarray
    positional: bool

    def __len__(self) -> int:
        return len(self.hashes)


def _quantize(rows: np.ndarray) -> np.ndarray:
    # 6-decimal rounding absorbs accumulation-order float noise without
    # creating false collisions at desk scale; -0.0 normalized to +0.0.
    q = np.round(np.asarray(rows, dtype=np.float64), QUANTIZE_DECIMALS)
    q[q == 0.0] = 0.0
    return q


def row_hashes(rows: np.ndarray) -> np.ndarray:
    """64-bit content hash per row after quantization."""
    q = _quantize(rows)
    out = np.empty(q.shape[0], dtype=np.uint64)
    for k in range(q.shape[0]):
        digest = hashlib.blake2b(q[k].tobytes(), digest_size=8).digest()
        out[k] = int.from_bytes(digest, "little")
    return out


def plain_signature(img: np.ndarray, patch_size: int) -> CollisionSignature:
    """Signature of a plain image: one hash per raw patch, positional."""
    return CollisionSignature(
        hashes=row_hashes(extract_patches(np.asarray(img, np.float32), patch_size)),
        positional=True,
    )


def encrypted_signature(data: np.ndarray, config: EncoderConfig) -> CollisionSignature:
    """Signature of an encrypted sample.

    Token outputs hash each token row; image outputs hash each output
    patch region.  When the scheme shuffles rows, positions are
    meaningless, so the signature degrades to a content multiset (the
    stated purpose of the shuffling).
    """
    data = np.asarray(data)
    if config.scheme == SCHEME_IMAGE:
        rows = extract_patches(data, config.patch_size)
        return CollisionSignature(hashes=row_hashes(rows), positional=True)
    if data.ndim != 2:
        raise DatasetError(
            f"token sample must be 2-d, got shape {data.shape}"
        )
    return CollisionSignature(
        hashes=row_hashes(data), positional=not config.patch_shuffle
    )


def pairwise_collision_matrix(signatures: list[CollisionSignature]) -> np.ndarray:
    """Counts of matching patch hashes for every sample pair.

    Entry (a, b) counts indices with equal hashes (positional) or the
    multiset intersection size (shuffled).  Symmetric, diagonal = N.
    """
    if not signatures:
        raise ValueError("need at least one signature")
    n_patches = len(signatures[0])
    if any(len(s) != n_patches for s in signatures):
        raise ValueError("signatures have mismatched lengths")
    kinds = {s.positional for s in signatures}
    if len(kinds) != 1:
        raise ValueError("cannot mix positional and multiset signatures")
    n = len(signatures)
    counts = np.zeros((n, n), dtype=np.int64)
    if kinds.pop():
        stacked = np.stack([s.hashes for s in signatures])
        counts[:] = (stacked[:, None, :] == stacked[None, :, :]).sum(axis=2)
    else:
        bags = [Counter(s.hashes.tolist()) for s in signatures]
        for a in range(n):
            counts[a, a] = n_patches
            for b in range(a + 1, n):
                shared = sum((bags[a] & bags[b]).values())
                counts[a, b] = counts[b, a] = shared
    return counts


def _sorted_rows(cm: np.ndarray) -> np.ndarray:
    """Each row without its diagonal entry, sorted descending."""
    n = cm.shape[0]
    rows = np.empty((n, n - 1), dtype=np.float64)
    for i in range(n):
        rows[i] = np.sort(np.delete(cm[i], i))[::-1]
    return rows


def signature_cost(plain_cm: np.ndarray, enc_cm: np.ndarray, i: int, j: int) -> float:
    """L1 distance between sorted off-diagonal rows i and j.

    Sorting makes the row signature invariant to sample ordering, which
    is all an attacker without correspondence can rely on.
    """
    plain_cm = np.asarray(plain_cm)
    enc_cm = np.asarray(enc_cm)
    if plain_cm.shape != enc_cm.shape or plain_cm.shape[0] != plain_cm.shape[1]:
        raise ValueError(
            f"collision matrices must be square and same-shaped, got "
            f"{plain_cm.shape} and {enc_cm.shape}"
        )
    sp = np.sort(np.delete(plain_cm[i], i))[::-1]
    se = np.sort(np.delete(enc_cm[j], j))[::-1]
    return float(np.abs(sp - se).sum())


def cost_matrix(plain_cm: np.ndarray, enc_cm: np.ndarray) -> np.ndarray:
    """All-pairs signature costs (vectorized over rows)."""
    plain_cm = np.asarray(plain_cm, dtype=np.float64)
    enc_cm = np.asarray(enc_cm, dtype=np.float64)
    if plain_cm.shape != enc_cm.shape or plain_cm.shape[0] != plain_cm.shape[1]:
        raise ValueError(
            f"collision matrices must be square and same-shaped, got "
            f"{plain_cm.shape} and {enc_cm.shape}"
        )
    if plain_cm.shape[0] == 1:
        return np.zeros((1, 1))
    sp = _sorted_rows(plain_cm)
    se = _sorted_rows(enc_cm)
    return np.abs(sp[:, None, :] - se[None, :, :]).sum(axis=2)


def _solve_assignment(cost: np.ndarray):
    """Hungarian method with potentials, O(n^3).

    Returns (row_to_col, u, v) where the duals satisfy
    cost[i][j] - u[i] - v[j] >= 0 with equality on matched edges.
    """
    n = cost.shape[0]
    padded = np.zeros((n + 1, n + 1))
    padded[1:, 1:] = cost
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_col = np.zeros(n + 1, dtype=np.int64)  # column -> row
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            free = ~used
            cur = padded[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            free_idx = np.flatnonzero(free)
            j1 = free_idx[np.argmin(minv[free_idx])]
            delta = minv[j1]
            u[match_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[match_col[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _lexicographic_refine(
    cost: np.ndarray, assignment: np.ndarray, u: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Lexicographically smallest perfect matching among the optimal ones.

    By complementary slackness every optimal assignment uses only edges
    that are tight under the optimal duals, and every perfect matching of
    tight edges is optimal, so the tie-break reduces to a lexicographic
    matching search with one augmenting-path feasibility check per
    candidate column.
    """
    n = cost.shape[0]
    scale = max(1.0, float(np.abs(cost).max()))
    tight = (cost - u[:, None] - v[None, :]) <= 1e-9 * scale
    match_row = assignment.copy()  # row -> col
    match_col = np.empty(n, dtype=np.int64)  # col -> row
    match_col[match_row] = np.arange(n)
    available = np.ones(n, dtype=bool)  # columns not yet fixed to earlier rows

    def reseat(row: int, visited: np.ndarray) -> bool:
        for c in np.flatnonzero(tight[row] & available & ~visited):
            visited[c] = True
            holder = match_col[c]
            if holder == -1 or reseat(holder, visited):
                match_row[row] = c
                match_col[c] = row
                return True
        return False

    for i in range(n):
        for c in range(n):
            if not (tight[i, c] and available[c]):
                continue
            if c == match_row[i]:
                break
            displaced = match_col[c]
            freed = match_row[i]
            match_row[i] = c
            match_col[c] = i
            match_col[freed] = -1
            match_row[displaced] = -1
            available[c] = False  # the re-seating path must not take c back
            if reseat(displaced, np.zeros(n, dtype=bool)):
                available[c] = True
                break
            available[c] = True
            match_row[displaced] = c
            match_col[c] = displaced
            match_row[i] = freed
            match_col[freed] = i
        available[match_row[i]] = False
    return match_row


def hungarian_assign(cost: np.ndarray) -> np.ndarray:
    """Exact minimum-cost perfect matching on a square cost matrix.

    Ties are broken toward the lexicographically smallest assignment
    vector (tie detection uses a tiny relative tolerance on equal costs,
    which is exact for integer-valued matrices).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if cost.size == 0:
        return np.zeros(0, dtype=np.int64)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    assignment, u, v = _solve_assignment(cost)
    return _lexicographic_refine(cost, assignment, u, v)


@dataclass
class MatchReport:
    """Outcome of one plain/encrypted matching run."""

    n: int
    assignment: list[int]
    total_cost: float
    accuracy: float | None
    no_collision_signal: bool
    scheme: str

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "assignment": self.assignment,
            "total_cost": self.total_cost,
            "accuracy": self.accuracy,
            "no_collision_signal": self.no_collision_signal,
            "scheme": self.scheme,
        }


def match_samples(
    plain_images: list[np.ndarray],
    enc_samples: list[np.ndarray],
    config: EncoderConfig,
    truth: list[int] | None = None,
) -> MatchReport:
    """Match in-memory plain images against encrypted samples.

    ``truth`` (plain index -> encrypted index), when known to the
    evaluator, turns the recovered assignment into an accuracy figure.
    """
    if len(plain_images) != len(enc_samples):
        raise DatasetError(
            f"sample counts differ: {len(plain_images)} plain vs "
            f"{len(enc_samples)} encrypted"
        )
    shuffled = config.scheme == SCHEME_TOKENS and config.patch_shuffle
    plain_sigs = [
        plain_signature(img, config.patch_size) for img in plain_images
    ]
    if shuffled:
        # Shuffled token rows lose positions; compare content multisets on
        # both sides (tokens stay index-bound through the position embedding,
        # so the multiset intersection equals the positional count).
        plain_sigs = [
            CollisionSignature(hashes=s.hashes, positional=False) for s in plain_sigs
        ]
    enc_sigs = [encrypted_signature(s, config) for s in enc_samples]
    plain_cm = pairwise_collision_matrix(plain_sigs)
    enc_cm = pairwise_collision_matrix(enc_sigs)
    costs = cost_matrix(plain_cm, enc_cm)
    assignment = hungarian_assign(costs)
    total = float(costs[np.arange(len(assignment)), assignment].sum())
    no_signal = bool(
        np.all(plain_cm[~np.eye(len(plain_cm), dtype=bool)] == 0)
        or np.all(enc_cm[~np.eye(len(enc_cm), dtype=bool)] == 0)
    )
    accuracy = None
    if truth is not None:
        accuracy = float(np.mean(assignment == np.asarray(truth)))
    return MatchReport(
        n=len(plain_images),
        assignment=assignment.tolist(),
        total_cost=total,
        accuracy=accuracy,
        no_collision_signal=no_signal,
        scheme=config.scheme,
    )


def match_plain_encrypted(plain_dir, enc_dir) -> MatchReport:
    """Directory-level matching attack.

    Plain images are taken in lexicographic name order; encrypted samples
    in manifest image_index order.  When every plain file name appears as
    a manifest source name, that mapping is used as ground truth for the
    reported accuracy.
    """
    manifest, enc_samples = load_encrypted_dataset(enc_dir)
    files = list_images(plain_dir)
    if not files:
        raise DatasetError(f"{plain_dir}: no PNG/PPM images found")
    plain_images = [load_image(p) for p in files]
    expected = (manifest.config.channels, manifest.config.height, manifest.config.width)
    offenders = [f.name for f, im in zip(files, plain_images) if im.shape != expected]
    if offenders:
        raise DatasetError(
            f"plain image geometry does not match manifest config {expected}: "
            f"{offenders}"
        )
    by_source = {s.source: s.image_index for s in manifest.samples}
    truth = None
    if all(f.name in by_source for f in files):
        truth = [by_source[f.name] for f in files]
    return match_samples(plain_images, enc_samples, manifest.config, truth=truth)


def _histogram(values: np.ndarray, bins: int = 32) -> dict:
    lo = float(values.min())
    hi = float(values.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def leakage_metrics(
    plain_images: list[np.ndarray],
    enc_samples: list[np.ndarray],
    config: EncoderConfig,
) -> dict:
    """Pure measurements of what the ciphertexts still reveal.

    Per-pair pixel Pearson correlation is only defined for image-shaped
    outputs; token outputs report it as unavailable.  No thresholding
    happens here.
    """
    if len(plain_images) != len(enc_samples):
        raise DatasetError(
            f"sample counts differ: {len(plain_images)} plain vs "
            f"{len(enc_samples)} encrypted"
        )
    report: dict = {"n_pairs": len(plain_images), "scheme": config.scheme}
    if config.scheme == SCHEME_IMAGE:
        per_pair = []
        for img, enc in zip(plain_images, enc_samples):
            a = np.asarray(img, np.float64).ravel()
            b = np.asarray(enc, np.float64).ravel()
            corr = float(np.corrcoef(a, b)[0, 1])
            per_pair.append(corr if np.isfinite(corr) else None)
        finite = [c for c in per_pair if c is not None]
        report["pixel_correlation"] = {
            "per_pair": per_pair,
            "mean": float(np.mean(finite)) if finite else None,
            "mean_abs": float(np.mean(np.abs(finite))) if finite else None,
        }
    else:
        report["pixel_correlation"] = None
        report["pixel_correlation_note"] = "N/A for token outputs"
    enc_sigs = [encrypted_signature(s, config) for s in enc_samples]
    cm = pairwise_collision_matrix(enc_sigs)
    n = len(enc_sigs)
    n_patches = len(enc_sigs[0])
    if n > 1:
        off = cm[~np.eye(n, dtype=bool)]
        rate = float(off.sum() / (off.size * n_patches))
    else:
        rate = 0.0
    report["token_collision_rate"] = rate
    report["plain_histogram"] = _histogram(
        np.concatenate([np.asarray(p).ravel() for p in plain_images])
    )
    report["encrypted_histogram"] = _histogram(
        np.concatenate([np.asarray(e).ravel() for e in enc_samples])
    )
    return report


def leakage_report(plain_dir, enc_dir) -> dict:
    """Directory-level leakage metrics, paired by manifest order."""
    manifest, enc_samples = load_encrypted_dataset(enc_dir)
    files = list_images(plain_dir)
    if not files:
        raise DatasetError(f"{plain_dir}: no PNG/PPM images found")
    by_source = {s.source: s.image_index for s in manifest.samples}
    if all(f.name in by_source for f in files):
        files = sorted(files, key=lambda f: by_source[f.name])
    plain_images = [load_image(p) for p in files]
    return leakage_metrics(plain_images, enc_samples, manifest.config)
