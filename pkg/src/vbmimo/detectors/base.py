"""Estimator base class and shared output containers for all detectors.

Detectors follow the scikit-learn estimator conventions: hyperparameters are
set in ``__init__`` and introspectable through ``get_params``/``set_params``,
``fit`` binds one channel realization (and returns ``self``), ``predict``
maps received vectors to hard symbol indices. ``detect`` is the richer
single-vector interface returning soft statistics and diagnostics.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field

import numpy as np

from ..constellation import Constellation, constellation_from_label
from ..errors import ConfigurationError


@dataclass
class TraceEntry:
    """Per-iteration snapshot recorded when ``record_trace`` is enabled."""

    iteration: int
    soft_means: np.ndarray
    soft_vars: np.ndarray
    z: np.ndarray
    noise: np.ndarray | float
    precision: float | None = None
    rnorm2: float | None = None
    residual_drift: float | None = None
    gain_trace: float | None = None


@dataclass
class DetectorOutput:
    """Result of detecting one received vector.

    ``hard_symbols`` are indices into the constellation point array.
    ``residual`` is the detector's final y - H <x> bookkeeping vector where
    the algorithm maintains one. ``channel_means`` is populated only by the
    joint channel/symbol detector.
    """

    soft_means: np.ndarray
    soft_vars: np.ndarray
    hard_symbols: np.ndarray
    iters_used: int
    trace: list[TraceEntry] | None = None
    diverged: bool = False
    residual: np.ndarray | None = field(default=None, repr=False)
    channel_means: np.ndarray | None = field(default=None, repr=False)


def check_channel_matrix(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.complex128)
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 1:
        raise ValueError(f"channel matrix must be 2-D, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("channel matrix contains non-finite entries")
    return H


def check_received_vector(y, m: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != (m,):
        raise ValueError(f"received vector must have shape ({m},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("received vector contains non-finite entries")
    return y


def check_noise_var(n0) -> float:
    n0 = float(n0)
    if not np.isfinite(n0) or n0 <= 0:
        raise ValueError(f"noise variance must be positive and finite, got {n0}")
    return n0


def resolve_update_order(update_order, k: int) -> np.ndarray:
    """Validate a user processing schedule; default is natural order."""
    if update_order is None:
        return np.arange(k, dtype=np.int64)
    order = np.ascontiguousarray(update_order, dtype=np.int64)
    if order.shape != (k,) or not np.array_equal(np.sort(order), np.arange(k)):
        raise ConfigurationError("update_order must be a permutation of 0..K-1")
    return order


class MimoDetector:
    """Base class; subclasses implement ``_fit`` and ``_detect``."""

    #: whether fit() expects the true noise variance
    requires_noise_var = True

    def __init__(self, constellation="qpsk", max_iters=50, early_stop_tol=1e-6,
                 record_trace=False):
        self.constellation = constellation
        self.max_iters = max_iters
        self.early_stop_tol = early_stop_tol
        self.record_trace = record_trace

    # -- scikit-learn parameter plumbing ------------------------------------

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ConfigurationError(
                    f"invalid parameter {key!r} for {type(self).__name__}"
                )
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    # -- fitting -------------------------------------------------------------

    def _resolve_constellation(self) -> Constellation:
        if isinstance(self.constellation, Constellation):
            return self.constellation
        return constellation_from_label(str(self.constellation))

    def _validate_config(self):
        if int(self.max_iters) < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if float(self.early_stop_tol) < 0:
            raise ConfigurationError("early_stop_tol must be >= 0")

    def fit(self, H, noise_var=None):
        """Bind one channel realization; returns self."""
        self._validate_config()
        H = check_channel_matrix(H)
        if self.requires_noise_var:
            if noise_var is None:
                raise ConfigurationError(
                    f"{type(self).__name__} requires the noise variance"
                )
            noise_var = check_noise_var(noise_var)
        self.constellation_ = self._resolve_constellation()
        self.H_ = H
        self.noise_var_ = noise_var
        self.m_, self.k_ = H.shape
        self._fit(H, noise_var)
        return self

    def _fit(self, H, noise_var):  # pragma: no cover - trivial default
        pass

    def _check_fitted(self):
        if not hasattr(self, "H_"):
            raise ConfigurationError(
                f"{type(self).__name__} must be fitted before detection"
            )

    # -- detection -----------------------------------------------------------

    def detect(self, y) -> DetectorOutput:
        """Detect one received vector, returning soft and hard statistics."""
        self._check_fitted()
        y = check_received_vector(y, self.m_)
        return self._detect(y)

    def _detect(self, y) -> DetectorOutput:
        raise NotImplementedError

    def predict(self, y) -> np.ndarray:
        """Hard symbol indices for one vector (M,) or a batch (n, M)."""
        self._check_fitted()
        y = np.asarray(y, dtype=np.complex128)
        if y.ndim == 1:
            return self.detect(y).hard_symbols
        if y.ndim == 2:
            return np.stack([self.detect(row).hard_symbols for row in y])
        raise ValueError(f"expected (M,) or (n, M) input, got shape {y.shape}")

    def predict_symbols(self, y) -> np.ndarray:
        """Hard decisions as complex constellation points."""
        idx = self.predict(y)
        return self.constellation_.points[idx]
