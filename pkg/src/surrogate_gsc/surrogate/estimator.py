"""scikit-learn style wrappers around the encoder and the surrogate network.

Encoded pulses travel through scikit-learn as flat rows of length
``3 * L_max``: the ``(L_max, 3)`` encoding of :func:`encode_input` in row-major
order.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .network import N_CHANNELS, Network, Normalization, encode_batch, grad_input
from .training import TrainConfig, train


class PulseEncoder(TransformerMixin, BaseEstimator):
    """Turn a sequence of :class:`ControlPulse` into flat encoded rows."""

    def __init__(self, L_max: int = 50, eps_scale: float = 1 / 3.2, dbz_scale: float = 1.0):
        self.L_max = L_max
        self.eps_scale = eps_scale
        self.dbz_scale = dbz_scale

    def fit(self, pulses=None, y=None):
        if self.L_max < 1:
            raise ValueError("L_max must be positive")
        self.n_features_out_ = N_CHANNELS * self.L_max
        return self

    @property
    def normalization(self) -> Normalization:
        return Normalization(self.eps_scale, self.dbz_scale)

    def transform(self, pulses) -> np.ndarray:
        X = encode_batch(list(pulses), self.L_max, self.normalization)
        return X.reshape(len(X), -1)


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """Predict ``(p_mean, p_stderr)`` from flat encoded pulses.

    ``fit`` holds out ``validation_fraction`` of the rows for the plateau
    schedule and early stopping; ``sample_weight`` enters the weighted MAE.
    """

    def __init__(self, network="desk", lr=1e-3, factor=0.8, patience=60, early_stop=130,
                 batch_size=256, max_epochs=200, validation_fraction=0.1, dtype="float32",
                 random_state=0):
        self.network = network
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.early_stop = early_stop
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.dtype = dtype
        self.random_state = random_state

    def _to_seq(self, X):
        if X.shape[1] % N_CHANNELS:
            raise ValueError(f"row length {X.shape[1]} is not a multiple of {N_CHANNELS}")
        return X.reshape(len(X), -1, N_CHANNELS)

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("y must have two columns (p_mean, p_stderr)")
        if np.any((y < 0) | (y > 1)):
            raise ValueError("targets must lie in [0, 1]")
        Xs = self._to_seq(X)
        n = len(X)
        if n < 2:
            raise ValueError("need at least two samples to hold out a validation row")
        seed = int(self.random_state or 0)
        order = np.random.default_rng(seed).permutation(n)
        n_val = min(n - 1, max(1, int(round(self.validation_fraction * n))))
        val, tr = order[:n_val], order[n_val:]
        w = None if sample_weight is None else np.asarray(sample_weight, dtype=float)[tr]
        cfg = TrainConfig(lr=self.lr, factor=self.factor, patience=self.patience,
                          early_stop=self.early_stop, batch_size=self.batch_size,
                          max_epochs=self.max_epochs, dtype=self.dtype)
        net = Network.initialize(self.network, seed=seed, dtype=np.dtype(self.dtype))
        self.network_, self.history_ = train(net, Xs[tr], y[tr], Xs[val], y[val], w, cfg, seed=seed)
        self.n_features_in_ = X.shape[1]
        self.L_max_ = Xs.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self._to_seq(X)

    def predict(self, X) -> np.ndarray:
        return self.network_.predict(self._check(X)).astype(np.float64)

    def input_gradient(self, X, upstream) -> np.ndarray:
        """``d(sum upstream * outputs)/d(encoded voltage)``, shape ``(n, L_max)``."""
        _, g = grad_input(self.network_, self._check(X), upstream)
        return g
