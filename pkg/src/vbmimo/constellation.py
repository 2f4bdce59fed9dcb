"""Symbol alphabets and the scalar posterior denoiser / MAP slicer.

Every detector in this package reduces the MIMO channel to per-user scalar
observations z = x + CN(0, sigma2) with x drawn from a discrete alphabet.
This module owns the alphabet itself (unit-energy, zero-mean, with priors)
and the two scalar primitives shared by all detectors: the posterior
mean/variance map (``denoise``) and the MAP decision (``map_slice``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

# Postulated noise variances can be driven arbitrarily close to zero by the
# iterative detectors; divide-by-zero is avoided with this floor.
SIGMA2_FLOOR = 1e-30

_QAM_ORDERS = (4, 16, 64)


def _gray_code(n: int) -> np.ndarray:
    k = np.arange(n)
    return k ^ (k >> 1)


@dataclass(eq=False)
class Constellation:
    """A discrete complex alphabet with prior probabilities.

    Points are normalized to zero mean and unit average energy. ``bit_labels``
    carries a Gray mapping for power-of-two alphabets (unused by symbol-error
    benchmarks, recorded for future bit-level work).
    """

    points: np.ndarray
    priors: np.ndarray
    label: str
    bit_labels: np.ndarray | None = None
    log_priors: np.ndarray = field(init=False, repr=False)
    abs2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.complex128)
        self.priors = np.asarray(self.priors, dtype=np.float64)
        if self.points.ndim != 1 or self.points.shape != self.priors.shape:
            raise ConfigurationError("points and priors must be 1-D and equal length")
        if np.any(self.priors < 0):
            raise ConfigurationError("priors must be nonnegative")
        if abs(self.priors.sum() - 1.0) > 1e-12:
            raise ConfigurationError("priors must sum to 1")
        mean = np.sum(self.priors * self.points)
        energy = np.sum(self.priors * np.abs(self.points) ** 2)
        if abs(mean) > 1e-12:
            raise ConfigurationError(f"alphabet must have zero prior mean, got {mean}")
        if abs(energy - 1.0) > 1e-12:
            raise ConfigurationError(f"alphabet must have unit energy, got {energy}")
        diffs = np.abs(self.points[:, None] - self.points[None, :])
        if np.any(diffs[~np.eye(self.size, dtype=bool)] == 0.0):
            raise ConfigurationError("constellation points must be pairwise distinct")
        with np.errstate(divide="ignore"):
            self.log_priors = np.where(self.priors > 0, np.log(self.priors), -np.inf)
        self.abs2 = np.abs(self.points) ** 2
        for arr in (self.points, self.priors, self.log_priors, self.abs2):
            arr.flags.writeable = False

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def prior_mean(self) -> complex:
        return complex(np.sum(self.priors * self.points))

    @property
    def prior_var(self) -> float:
        return float(np.sum(self.priors * self.abs2) - abs(self.prior_mean) ** 2)


@dataclass
class DenoiserResult:
    """Posterior over the alphabet given one scalar AWGN observation."""

    pmf: np.ndarray
    mean: complex
    variance: float


def _square_qam_points(order: int) -> tuple[np.ndarray, np.ndarray]:
    m = int(round(np.sqrt(order)))
    levels = np.arange(-(m - 1), m, 2, dtype=np.float64)
    re, im = np.meshgrid(levels, levels, indexing="ij")
    pts = (re + 1j * im).ravel()
    pts /= np.sqrt(np.mean(np.abs(pts) ** 2))
    # Gray label per axis, interleaved I/Q
    gray = _gray_code(m)
    bits_axis = int(np.log2(m))
    labels = np.empty(order, dtype=np.int64)
    idx = 0
    for i in range(m):
        for q in range(m):
            labels[idx] = (int(gray[i]) << bits_axis) | int(gray[q])
            idx += 1
    return pts, labels


def make_constellation(scheme: str, order: int | None = None) -> Constellation:
    """Build a standard unit-energy alphabet with uniform priors.

    ``scheme`` is one of ``"qpsk"``, ``"qam"``, ``"psk"``. QAM supports the
    square orders 4, 16 and 64; PSK supports any order >= 2. QPSK is the
    order-4 square QAM, points {(+-1 +-j)/sqrt(2)}.
    """
    scheme = scheme.lower()
    if scheme == "qpsk":
        if order not in (None, 4):
            raise ConfigurationError("qpsk has fixed order 4")
        pts, labels = _square_qam_points(4)
        name = "qpsk"
    elif scheme == "qam":
        if order not in _QAM_ORDERS:
            raise ConfigurationError(
                f"unsupported QAM order {order}; supported: {_QAM_ORDERS}"
            )
        pts, labels = _square_qam_points(order)
        name = f"{order}qam"
    elif scheme == "psk":
        if order is None or order < 2:
            raise ConfigurationError("psk requires order >= 2")
        k = np.arange(order)
        pts = np.exp(2j * np.pi * k / order)
        labels = _gray_code(order) if (order & (order - 1)) == 0 else None
        name = f"{order}psk"
    else:
        raise ConfigurationError(f"unknown modulation scheme '{scheme}'")
    priors = np.full(len(pts), 1.0 / len(pts))
    return Constellation(points=pts, priors=priors, label=name, bit_labels=labels)


def constellation_from_label(label: str) -> Constellation:
    """Parse CLI-style names: 'qpsk', '16qam', '64qam', '8psk', ..."""
    s = label.strip().lower()
    if s == "qpsk":
        return make_constellation("qpsk")
    for suffix, scheme in (("qam", "qam"), ("psk", "psk")):
        if s.endswith(suffix):
            try:
                order = int(s[: -len(suffix)])
            except ValueError:
                raise ConfigurationError(f"cannot parse modulation '{label}'") from None
            return make_constellation(scheme, order)
    raise ConfigurationError(f"cannot parse modulation '{label}'")


def _check_scalar_inputs(z: complex, sigma2: float) -> float:
    if not (np.isfinite(z.real) and np.isfinite(z.imag)):
        raise ValueError(f"non-finite observation z={z}")
    if not np.isfinite(sigma2):
        raise ValueError(f"non-finite noise variance sigma2={sigma2}")
    if sigma2 <= 0:
        raise ValueError(f"noise variance must be positive, got {sigma2}")
    return max(sigma2, SIGMA2_FLOOR)


def denoise(z: complex, sigma2: float, c: Constellation) -> DenoiserResult:
    """Posterior pmf, mean and variance of x given z = x + CN(0, sigma2).

    Evaluated in the log domain with a max shift so that small ``sigma2``
    (high SNR) never overflows the exponential.
    """
    z = complex(z)
    sigma2 = _check_scalar_inputs(z, float(sigma2))
    expo = c.log_priors - np.abs(z - c.points) ** 2 / sigma2
    expo -= expo.max()
    w = np.exp(expo)
    pmf = w / w.sum()
    mean = complex(np.sum(pmf * c.points))
    variance = float(np.sum(pmf * c.abs2) - abs(mean) ** 2)
    if variance < 0.0:
        variance = 0.0
    return DenoiserResult(pmf=pmf, mean=mean, variance=variance)


def map_slice(z: complex, sigma2: float, c: Constellation) -> int:
    """MAP symbol index: argmax over a of log p_a - |z - a|^2 / sigma2.

    Ties break toward the lowest point index. With uniform priors this is
    nearest-neighbor slicing for any sigma2.
    """
    z = complex(z)
    sigma2 = _check_scalar_inputs(z, float(sigma2))
    metric = c.log_priors - np.abs(z - c.points) ** 2 / sigma2
    return int(np.argmax(metric))


def denoise_array(z: np.ndarray, sigma2, c: Constellation):
    """Vectorized posterior means/variances for a vector of observations.

    ``sigma2`` may be a scalar or a per-entry array. Returns (means, vars).
    """
    z = np.asarray(z, dtype=np.complex128)
    s2 = np.maximum(np.broadcast_to(np.asarray(sigma2, dtype=np.float64), z.shape),
                    SIGMA2_FLOOR)
    expo = c.log_priors[None, :] - np.abs(z[:, None] - c.points[None, :]) ** 2 / s2[:, None]
    expo -= expo.max(axis=1, keepdims=True)
    w = np.exp(expo)
    w /= w.sum(axis=1, keepdims=True)
    means = w @ c.points
    variances = w @ c.abs2 - np.abs(means) ** 2
    np.maximum(variances, 0.0, out=variances)
    return means, variances


def map_slice_array(z: np.ndarray, sigma2, c: Constellation) -> np.ndarray:
    """Vectorized MAP slicing; same tie-break as ``map_slice``."""
    z = np.asarray(z, dtype=np.complex128)
    s2 = np.maximum(np.broadcast_to(np.asarray(sigma2, dtype=np.float64), z.shape),
                    SIGMA2_FLOOR)
    metric = c.log_priors[None, :] - np.abs(z[:, None] - c.points[None, :]) ** 2 / s2[:, None]
    return np.argmax(metric, axis=1)
