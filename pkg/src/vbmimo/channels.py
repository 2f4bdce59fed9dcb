"""Channel generation, pilot simulation and MMSE channel estimation.

Conventions: the receive array has M antennas, K single-antenna users, and
per-user covariances are normalized so diag(R_i) = 1/M (unit average channel
energy per user). The noise level for a target SNR follows from that trace
normalization: N0 = K / (M * snr_linear).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError


def crandn(rng: np.random.Generator, *shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples, unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def noise_var_for_snr(snr_db: float, m: int, k: int) -> float:
    """N0 such that sum_i Tr(R_i) / (M * N0) equals the linear SNR."""
    return k / (m * 10.0 ** (snr_db / 10.0))


@dataclass
class ChannelScenario:
    """One realization of the uplink channel plus its model statistics."""

    H: np.ndarray
    R: list[np.ndarray]
    n0: float | None = None

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def k(self) -> int:
        return self.H.shape[1]

    @property
    def beta(self) -> float:
        return self.k / self.m


@dataclass
class ChannelEstimate:
    """MMSE channel estimate with per-user error statistics.

    ``error_covs`` holds the K error covariance matrices. When every R_i is
    the scaled identity (1/M) I, estimation decouples per antenna and
    ``iid_error_var`` carries the common scalar s with K_i = s I; detectors
    use that to skip all matrix inversions.
    """

    h_hat: np.ndarray
    error_covs: list[np.ndarray] | None
    iid_error_var: float | None
    pilot_power: float
    pilot_len: int
    noise_var: float

    @property
    def pilot_energy(self) -> float:
        return self.pilot_power * self.pilot_len

    def error_cov(self, i: int) -> np.ndarray:
        if self.error_covs is not None:
            return self.error_covs[i]
        m = self.h_hat.shape[0]
        return self.iid_error_var * np.eye(m)


def gen_iid_channel(m: int, k: int, rng: np.random.Generator) -> ChannelScenario:
    """i.i.d. Rayleigh channel: entries CN(0, 1/M), so E||h_i||^2 = 1."""
    if m < 1 or k < 1:
        raise ConfigurationError("m and k must be >= 1")
    H = crandn(rng, m, k) / np.sqrt(m)
    R = np.eye(m) / m
    R.flags.writeable = False
    return ChannelScenario(H=H, R=[R] * k)


def exp_corr_covariance(m: int, alpha: complex) -> np.ndarray:
    """Exponential spatial-correlation covariance, trace-normalized to 1.

    [R]_{kl} = (1/M) alpha^{k-l} for k >= l and the conjugate mirror above
    the diagonal; |alpha| < 1.
    """
    alpha = complex(alpha)
    if abs(alpha) >= 1:
        raise ConfigurationError(f"|alpha| must be < 1, got {abs(alpha)}")
    col = alpha ** np.arange(m) / m
    R = sla.toeplitz(col, np.conj(col))
    return R


def covariance_factor(R: np.ndarray) -> np.ndarray:
    """A with A A^H = R via Hermitian eigendecomposition.

    Negative eigenvalues (numerically semi-definite inputs) are clamped to 0.
    """
    R = np.asarray(R, dtype=np.complex128)
    w, U = np.linalg.eigh(R)
    if w.min() < -1e-10 * max(w.max(), 1.0):
        raise ValueError("covariance is not positive semi-definite")
    w = np.clip(w, 0.0, None)
    return U * np.sqrt(w)[None, :]


def gen_correlated_channel(
    R: list[np.ndarray],
    rng: np.random.Generator,
    factors: list[np.ndarray] | None = None,
) -> ChannelScenario:
    """Correlated Rayleigh channel: h_i = R_i^{1/2} g_i, g_i ~ CN(0, I).

    Columns are mutually independent. Precomputed ``factors`` (from
    ``covariance_factor``) may be passed to skip the eigendecompositions.
    """
    k = len(R)
    if factors is None:
        cache: dict[int, np.ndarray] = {}
        factors = []
        for Ri in R:
            key = id(Ri)
            if key not in cache:
                cache[key] = covariance_factor(Ri)
            factors.append(cache[key])
    m = factors[0].shape[0]
    G = crandn(rng, m, k)
    H = np.empty((m, k), dtype=np.complex128)
    for i in range(k):
        H[:, i] = factors[i] @ G[:, i]
    return ChannelScenario(H=H, R=list(R))


def make_orthogonal_pilots(k: int, tp: int, pp: float) -> np.ndarray:
    """K x Tp pilot matrix with X_p X_p^H = Pp * Tp * I.

    Rows are the first K rows of the Tp-point DFT matrix scaled by sqrt(Pp);
    orthogonality is exact up to floating-point roundoff.
    """
    if tp < k:
        raise ConfigurationError(f"pilot length tp={tp} must be >= k={k}")
    if pp <= 0:
        raise ConfigurationError("pilot power must be positive")
    rows = np.arange(k)[:, None] * np.arange(tp)[None, :]
    return np.sqrt(pp) * np.exp(-2j * np.pi * rows / tp)


def simulate_pilot_phase(
    scenario: ChannelScenario, pilots: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Received pilot block Y_p = H X_p + N_p with i.i.d. CN(0, N0) noise."""
    if scenario.n0 is None:
        raise ConfigurationError("scenario.n0 must be set to simulate the pilot phase")
    m, tp = scenario.m, pilots.shape[1]
    return scenario.H @ pilots + np.sqrt(scenario.n0) * crandn(rng, m, tp)


def _is_scaled_identity(R: np.ndarray, scale: float) -> bool:
    m = R.shape[0]
    return np.allclose(R, scale * np.eye(m), atol=1e-14)


def mmse_channel_estimate(
    y_p: np.ndarray,
    pilots: np.ndarray,
    R: list[np.ndarray],
    n0: float,
) -> ChannelEstimate:
    """Per-user MMSE channel estimate from an orthogonal pilot block.

    h_hat_i = R_i (Pp Tp R_i + N0 I)^{-1} Y_p x_{p,i}^* and the error
    e_i = h_i - h_hat_i has covariance K_i = N0 (Pp Tp R_i + N0 I)^{-1} R_i.
    This rearrangement never inverts R_i itself, so semi-definite covariances
    are handled. For R_i = (1/M) I the scalar closed forms are used and
    ``iid_error_var`` is populated.
    """
    y_p = np.asarray(y_p, dtype=np.complex128)
    pilots = np.asarray(pilots, dtype=np.complex128)
    m = y_p.shape[0]
    k, tp = pilots.shape
    if y_p.shape[1] != tp:
        raise ConfigurationError("y_p and pilots disagree on pilot length")
    if len(R) != k:
        raise ConfigurationError("need one covariance per user")
    gram = pilots @ pilots.conj().T
    pe = float(gram[0, 0].real)
    off = gram - pe * np.eye(k)
    if not np.allclose(off, 0.0, atol=1e-10 * max(pe, 1.0)):
        raise ConfigurationError("pilots are not orthogonal")
    if n0 <= 0:
        raise ConfigurationError("n0 must be positive")

    v = y_p @ pilots.conj().T  # columns: Y_p x_{p,i}^*
    h_hat = np.empty((m, k), dtype=np.complex128)

    if all(_is_scaled_identity(Ri, 1.0 / m) for Ri in R):
        h_hat[:] = v / (pe + m * n0)
        err = 1.0 / (pe / n0 + m)
        return ChannelEstimate(
            h_hat=h_hat, error_covs=None, iid_error_var=err,
            pilot_power=pe / tp, pilot_len=tp, noise_var=n0,
        )

    covs: list[np.ndarray] = []
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for i, Ri in enumerate(R):
        key = id(Ri)
        if key not in cache:
            A = pe * Ri + n0 * np.eye(m)
            AinvR = np.linalg.solve(A, Ri)
            Ki = n0 * AinvR
            Ki = 0.5 * (Ki + Ki.conj().T)
            cache[key] = (AinvR, Ki)
        AinvR, Ki = cache[key]
        # R_i A^{-1} = (A^{-1} R_i)^H since both are polynomials in R_i
        h_hat[:, i] = AinvR.conj().T @ v[:, i]
        covs.append(Ki)
    return ChannelEstimate(
        h_hat=h_hat, error_covs=covs, iid_error_var=None,
        pilot_power=pe / tp, pilot_len=tp, noise_var=n0,
    )
