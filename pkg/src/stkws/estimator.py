"""scikit-learn compatible wrappers: an MFCC transformer and the network classifier."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .audio import SAMPLE_RATE, AudioClip, band_limit, mfcc
from .exceptions import ValidationError
from .models import build, footprint, get_spec
from .training import TrainConfig, fit


class MFCCTransformer(TransformerMixin, BaseEstimator):
    """Map raw clips ``(n_clips, n_samples)`` to MFCC maps ``(n_clips, 98, 40)``.

    Stateless: ``fit`` only validates its input.
    """

    def __init__(self, sample_rate=SAMPLE_RATE, low_hz=20.0, high_hz=7800.0, n_mfcc=40):
        self.sample_rate = sample_rate
        self.low_hz = low_hz
        self.high_hz = high_hz
        self.n_mfcc = n_mfcc

    def fit(self, X, y=None):
        check_array(X, ensure_all_finite=True)
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        out = []
        for row in X:
            clip = AudioClip(row, self.sample_rate).fit_to_one_second()
            out.append(mfcc(band_limit(clip, self.low_hz, self.high_hz), self.n_mfcc).values)
        return np.stack(out)


def _check_features(X, n_mfcc):
    X = check_array(X, allow_nd=True, dtype=(np.float32, np.float64), ensure_all_finite=True)
    if X.ndim != 3 or X.shape[2] != n_mfcc:
        raise ValidationError(f"expected (n, T, {n_mfcc}) features, got {X.shape}")
    return X


class STAttNetClassifier(ClassifierMixin, BaseEstimator):
    """Separable temporal convolution keyword classifier.

    Labels are integer class indices in ``[0, num_classes)``; ``predict_proba``
    always returns ``num_classes`` columns.  Pass ``eval_set=(X_dev, y_dev)``
    to ``fit`` for learning-rate scheduling and best-model selection;
    without it the training set plays that role.
    """

    def __init__(self, variant="ST-AttNet4", epochs=80, batch_size=100, learning_rate=1e-3,
                 num_classes=12, seed=0, dtype="float32", record_train_accuracy=False):
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.num_classes = num_classes
        self.seed = seed
        self.dtype = dtype
        self.record_train_accuracy = record_train_accuracy

    def _spec(self):
        return get_spec(self.variant, num_classes=self.num_classes)

    def fit(self, X, y, eval_set=None):
        spec = self._spec()
        X = _check_features(X, spec.n_mfcc)
        y = np.asarray(y)
        if y.shape != (len(X),) or not np.issubdtype(y.dtype, np.integer):
            raise ValidationError("y must be a 1-d integer array matching X")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")
        if eval_set is None:
            X_dev, y_dev = X, y
        else:
            X_dev = _check_features(eval_set[0], spec.n_mfcc)
            y_dev = np.asarray(eval_set[1])
        dtype = np.dtype(self.dtype)
        config = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, initial_lr=self.learning_rate,
                             seed=self.seed, variant=self.variant,
                             record_train_accuracy=self.record_train_accuracy)
        X_train = X.astype(dtype, copy=False)

        def batches(epoch):
            order = np.random.default_rng([self.seed, epoch]).permutation(len(y))
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                yield X_train[idx], y[idx]

        model = build(spec, seed=self.seed, dtype=dtype)
        self.model_, self.history_ = fit(model, batches, (X_dev.astype(dtype, copy=False), y_dev), config,
                                         train_data=(X_train, y))
        self.classes_ = np.arange(self.num_classes)
        self.n_features_in_ = spec.n_mfcc
        return self

    def predict_proba(self, X, batch_size=500):
        check_is_fitted(self, "model_")
        X = _check_features(X, self.model_.spec.n_mfcc).astype(self.model_.dtype, copy=False)
        return np.concatenate([self.model_.predict_proba(X[i:i + batch_size])
                               for i in range(0, len(X), batch_size)])

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def attention_weights(self, X):
        """Per-head frame weights ``(n, heads, T)``."""
        check_is_fitted(self, "model_")
        X = _check_features(X, self.model_.spec.n_mfcc).astype(self.model_.dtype, copy=False)
        return self.model_.attention_weights(X)

    def footprint(self):
        return footprint(self._spec())
