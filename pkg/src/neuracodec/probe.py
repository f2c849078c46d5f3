"""Linear-probe utility evaluation.

A softmax probe trained on frozen representations measures how much
class-discriminative signal survives encryption, standing in for
full-scale classifier training on a cloud host.  The toy dataset keeps
the whole experiment deterministic and fast: colored rectangles with
class-specific color and size, plus keyed pixel noise.
"""

from __future__ import annotations

import colorsys

import numpy as np

from .encoder import (
    SCHEME_IMAGE,
    SCHEME_TOKENS,
    EncoderConfig,
    build_weights,
    draw_patch_permutation,
    encrypt_with_weights,
)
from .estimators import SoftmaxProbe, loss_and_grads
from .keying import (
    MasterKey,
    keystream,
    sample_gaussian,
    sample_permutation,
    sample_uniform,
)
from .validation import check_feature_matrix


def _uniform_int(stream, lo: int, hi: int) -> int:
    """Uniform integer in [lo, hi] (inclusive); negligible bias is fine here."""
    return lo + int(sample_uniform(stream) * (hi - lo + 1))


def _class_palette(n_classes: int) -> list[tuple[float, float, float]]:
    return [
        colorsys.hsv_to_rgb(k / n_classes, 0.75, 0.85) for k in range(n_classes)
    ]


def generate_toy_dataset(
    key: MasterKey,
    n_classes: int,
    n_per_class: int,
    *,
    channels: int = 3,
    height: int = 32,
    width: int = 32,
    noise_sigma: float = 0.05,
    split: str = "train",
) -> tuple[np.ndarray, np.ndarray]:
    """Labeled plain images: one colored rectangle per image.

    Class k draws its rectangle color from a fixed palette and its side
    length from a class-specific band, plus keyed Gaussian pixel noise
    (clamped back to [0, 1]).  Deterministic given (key, split).
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    palette = _class_palette(n_classes)
    span = max(min(height, width) // 2 - 4, 1)
    images = np.empty((n_classes * n_per_class, channels, height, width), np.float32)
    labels = np.empty(n_classes * n_per_class, np.int64)
    idx = 0
    for k in range(n_classes):
        base = 4 + round(k * span / max(n_classes - 1, 1))
        color = palette[k]
        for s in range(n_per_class):
            stream = keystream(key, f"toy.{split}.c{k}.s{s}")
            side = _uniform_int(stream, base, min(base + 3, min(height, width)))
            top = _uniform_int(stream, 0, height - side)
            left = _uniform_int(stream, 0, width - side)
            img = np.full((channels, height, width), 0.45, np.float32)
            for c in range(channels):
                img[c, top : top + side, left : left + side] = color[c % 3]
            if noise_sigma > 0:
                noise = sample_gaussian(
                    stream, channels * height * width, 0.0, noise_sigma
                ).reshape(channels, height, width)
                img = np.clip(img + noise, 0.0, 1.0)
            images[idx] = img
            labels[idx] = k
            idx += 1
    return images, labels


def train_probe(X, y, epochs: int, lr: float) -> SoftmaxProbe:
    """Fit a softmax probe (full-batch GD from zero initialization)."""
    return SoftmaxProbe(epochs=epochs, lr=lr).fit(X, y)


def evaluate(model: SoftmaxProbe, X, y) -> tuple[float, np.ndarray]:
    """Accuracy and confusion matrix (rows true, columns predicted)."""
    X, y = check_feature_matrix(X, y)
    pred = model.predict(X)
    classes = model.classes_
    k = len(classes)
    index_of = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(y, pred):
        confusion[index_of[t], index_of[p]] += 1
    return float(np.mean(pred == y)), confusion


def _encrypt_features(
    images: np.ndarray, key: MasterKey, config: EncoderConfig, first_index: int
) -> np.ndarray:
    weights = build_weights(key, config)
    rows = []
    for i, img in enumerate(images):
        perm = draw_patch_permutation(key, config, first_index + i)
        rows.append(
            encrypt_with_weights(img, weights, config, perm=perm).data.ravel()
        )
    return np.stack(rows).astype(np.float64)


def utility_experiment(
    key: MasterKey,
    *,
    n_classes: int = 3,
    train_per_class: int = 100,
    test_per_class: int = 50,
    channels: int = 3,
    height: int = 32,
    width: int = 32,
    patch_size: int = 8,
    hidden_width: int = 192,
    depth: int = 4,
    epochs: int = 200,
    lr: float = 0.5,
    noise_sigma: float = 0.05,
) -> dict:
    """Train the probe on plain and on encrypted representations.

    Reports test accuracy for plain pixels, image-scheme ciphertexts and
    token-scheme ciphertexts, plus a label-shuffled control that should
    sit near chance.  All four probes use identical settings.
    """
    gen = dict(
        channels=channels, height=height, width=width, noise_sigma=noise_sigma
    )
    train_x, train_y = generate_toy_dataset(
        key, n_classes, train_per_class, split="train", **gen
    )
    test_x, test_y = generate_toy_dataset(
        key, n_classes, test_per_class, split="test", **gen
    )

    def run(train_feats, test_feats, y_train) -> float:
        # Per-feature standardization from train statistics puts every
        # representation on the same footing; without it one shared
        # learning rate cannot fit both pixel-scale and token-scale inputs.
        mu = train_feats.mean(axis=0)
        sd = train_feats.std(axis=0)
        sd[sd < 1e-8] = 1.0
        model = train_probe((train_feats - mu) / sd, y_train, epochs, lr)
        acc, _ = evaluate(model, (test_feats - mu) / sd, test_y)
        return acc

    flat = lambda a: a.reshape(a.shape[0], -1).astype(np.float64)
    plain_acc = run(flat(train_x), flat(test_x), train_y)

    accs = {}
    for scheme in (SCHEME_IMAGE, SCHEME_TOKENS):
        config = EncoderConfig(
            scheme=scheme,
            channels=channels,
            height=height,
            width=width,
            patch_size=patch_size,
            hidden_width=hidden_width,
            depth=depth,
        )
        enc_train = _encrypt_features(train_x, key, config, 0)
        enc_test = _encrypt_features(test_x, key, config, len(train_x))
        accs[scheme] = run(enc_train, enc_test, train_y)

    shuffle = sample_permutation(
        keystream(key, "probe.label_shuffle"), len(train_y)
    )
    shuffled_acc = run(flat(train_x), flat(test_x), train_y[shuffle])

    return {
        "settings": {
            "n_classes": n_classes,
            "train_per_class": train_per_class,
            "test_per_class": test_per_class,
            "channels": channels,
            "height": height,
            "width": width,
            "patch_size": patch_size,
            "hidden_width": hidden_width,
            "depth": depth,
            "epochs": epochs,
            "lr": lr,
            "noise_sigma": noise_sigma,
            "key_fingerprint": key.fingerprint(),
        },
        "chance": 1.0 / n_classes,
        "plain_acc": plain_acc,
        "color_acc": accs[SCHEME_IMAGE],
        "neuracrypt_acc": accs[SCHEME_TOKENS],
        "shuffled_label_acc": shuffled_acc,
    }


__all__ = [
    "evaluate",
    "generate_toy_dataset",
    "loss_and_grads",
    "train_probe",
    "utility_experiment",
]
