"""scikit-learn style estimators wrapping the functional pipeline.

``RandomNetworkEncoder`` is a transformer (fit derives the keyed weights,
transform encrypts image batches) and ``SoftmaxProbe`` is a deterministic
multinomial logistic-regression classifier, so both compose with
pipelines, ``clone`` and grid search like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .encoder import (
    EncoderConfig,
    build_weights,
    draw_patch_permutation,
    encrypt_with_weights,
)
from .keying import MasterKey, parse_key
from .validation import check_feature_matrix, check_image_batch


def _as_master_key(key) -> MasterKey:
    if key is None:
        return MasterKey.generate()
    if isinstance(key, MasterKey):
        return key
    if isinstance(key, str):
        return parse_key(key)
    raise TypeError(f"key must be None, a hex string or MasterKey, got {type(key)!r}")


class RandomNetworkEncoder(BaseEstimator, TransformerMixin):
    """Encrypt image batches through a keyed random network.

    Parameters
    ----------
    key : str, MasterKey or None
        64-hex-char key or key object; None draws a fresh key at fit time.
    scheme : {"neuracrypt", "color"}
        Token-matrix output with per-image row shuffling, or image output.
    patch_size, depth, hidden_width, output_dim, patch_shuffle
        Network geometry; image geometry itself is inferred from X in fit.
    flatten_output : bool
        Return 2-d (n, features) arrays so the transformer can feed
        ordinary downstream estimators in a Pipeline.
    index_offset : int
        First image index used for per-image permutations in transform;
        indices advance by position within the batch.
    """

    def __init__(
        self,
        key=None,
        scheme="neuracrypt",
        patch_size=16,
        depth=4,
        hidden_width=768,
        output_dim=None,
        patch_shuffle=None,
        flatten_output=False,
        index_offset=0,
    ):
        self.key = key
        self.scheme = scheme
        self.patch_size = patch_size
        self.depth = depth
        self.hidden_width = hidden_width
        self.output_dim = output_dim
        self.patch_shuffle = patch_shuffle
        self.flatten_output = flatten_output
        self.index_offset = index_offset

    def fit(self, X, y=None):
        """Resolve the configuration from X's geometry and derive weights."""
        X = check_image_batch(X)
        _, c, h, w = X.shape
        self.config_ = EncoderConfig(
            scheme=self.scheme,
            channels=c,
            height=h,
            width=w,
            patch_size=self.patch_size,
            hidden_width=self.hidden_width,
            depth=self.depth,
            output_dim=self.output_dim,
            patch_shuffle=self.patch_shuffle,
        )
        self.master_key_ = _as_master_key(self.key)
        self.weights_ = build_weights(self.master_key_, self.config_)
        return self

    def transform(self, X) -> np.ndarray:
        """Encrypt a batch; image_index is index_offset + batch position."""
        if not hasattr(self, "weights_"):
            raise NotFittedError("RandomNetworkEncoder is not fitted yet")
        X = check_image_batch(X)
        cfg = self.config_
        if X.shape[1:] != (cfg.channels, cfg.height, cfg.width):
            raise ValueError(
                f"batch geometry {X.shape[1:]} does not match fitted config "
                f"({cfg.channels}, {cfg.height}, {cfg.width})"
            )
        out = []
        for i, img in enumerate(X):
            perm = draw_patch_permutation(
                self.master_key_, cfg, self.index_offset + i
            )
            out.append(
                encrypt_with_weights(img, self.weights_, cfg, perm=perm).data
            )
        stacked = np.stack(out)
        if self.flatten_output:
            return stacked.reshape(stacked.shape[0], -1)
        return stacked

    def _more_tags(self):
        return {"requires_fit": True}


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-stabilized softmax."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(weights, bias, X, Y):
    """Mean cross-entropy and its exact gradients for a linear softmax model.

    Y is one-hot (m, k).  Returns (loss, grad_weights, grad_bias).
    """
    m = X.shape[0]
    probs = softmax(X @ weights.T + bias)
    eps = np.finfo(np.float64).tiny
    loss = float(-np.sum(Y * np.log(probs + eps)) / m)
    delta = (probs - Y) / m
    return loss, delta.T @ X, delta.sum(axis=0)


class SoftmaxProbe(BaseEstimator, ClassifierMixin):
    """Multinomial logistic regression by full-batch gradient descent.

    Zero initialization and exact analytic gradients make training fully
    deterministic: identical inputs and settings give identical weights.
    """

    def __init__(self, epochs=200, lr=0.5):
        self.epochs = epochs
        self.lr = lr

    def fit(self, X, y):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        X, y = check_feature_matrix(X, y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError(
                f"training set is degenerate: only {len(self.classes_)} class present"
            )
        k, m = len(self.classes_), X.shape[0]
        index_of = {c: i for i, c in enumerate(self.classes_)}
        Y = np.zeros((m, k))
        Y[np.arange(m), [index_of[c] for c in y]] = 1.0
        W = np.zeros((k, X.shape[1]))
        b = np.zeros(k)
        losses = []
        for _ in range(self.epochs):
            loss, gW, gb = loss_and_grads(W, b, X, Y)
            losses.append(loss)
            W -= self.lr * gW
            b -= self.lr * gb
        self.coef_ = W
        self.intercept_ = b
        self.loss_curve_ = losses
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise NotFittedError("SoftmaxProbe is not fitted yet")
        X = check_feature_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"feature length {X.shape[1]} does not match model "
                f"dimension {self.n_features_in_}"
            )
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        # argmax breaks ties toward the smaller class index
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]
