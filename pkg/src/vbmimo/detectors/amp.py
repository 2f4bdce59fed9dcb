"""Approximate message passing detectors (parallel-update baselines)."""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from ..constellation import denoise_array, map_slice_array
from .base import DetectorOutput, MimoDetector, TraceEntry

# running error-variance states are clamped to [VAR_FLOOR, 10 * prior variance]
VAR_FLOOR = 1e-12


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


class AmpDetector(MimoDetector):
    """AMP with the posterior-mean denoiser and Onsager-corrected residual.

    Each iteration forms z = x_hat + H^H r, denoises at the postulated level
    sigma2 = N0 + beta * nu2, and feeds the denoiser error power back through
    the Onsager term of the residual. Diverges on ill-conditioned channels;
    a non-finite state halts the loop and flags ``diverged``.
    """

    def _fit(self, H, noise_var):
        self._Hh_ = np.ascontiguousarray(H.conj().T)
        self._beta_ = self.k_ / self.m_

    def _detect(self, y):
        c = self.constellation_
        n0 = self.noise_var_
        tol = float(self.early_stop_tol)
        pv = c.prior_var
        x = np.zeros(self.k_, dtype=np.complex128)
        vars_ = np.full(self.k_, pv)
        r = y.copy()
        nu2 = pv
        z = x
        sigma2 = n0 + self._beta_ * nu2
        trace = [] if self.record_trace else None
        diverged = False
        iters = 0
        for t in range(1, int(self.max_iters) + 1):
            with np.errstate(over="ignore", invalid="ignore"):
                z_new = x + self._Hh_ @ r
            if not _finite(z_new):
                diverged = True
                break
            z = z_new
            sigma2 = n0 + self._beta_ * nu2
            means, vars_ = denoise_array(z, sigma2, c)
            nu2_new = min(max(float(vars_.mean()), VAR_FLOOR), 10.0 * pv)
            r = y - self.H_ @ means + self._beta_ * (nu2_new / sigma2) * r
            dx = float(np.abs(means - x).max())
            x = means
            nu2 = nu2_new
            iters = t
            if trace is not None:
                trace.append(TraceEntry(
                    iteration=t, soft_means=x.copy(), soft_vars=vars_.copy(),
                    z=z.copy(), noise=sigma2,
                ))
            if not _finite(r, x):
                diverged = True
                break
            if dx < tol:
                break
        hard = map_slice_array(z, sigma2, c)
        return DetectorOutput(
            soft_means=x, soft_vars=vars_, hard_symbols=hard,
            iters_used=max(iters, 1), trace=trace, diverged=diverged,
        )


class OampDetector(MimoDetector):
    """OAMP/VAMP with the whitened linear filter and divergence-free denoiser.

    The per-iteration filter is the error-weighted LMMSE matrix, trace
    normalized so Tr(A H) = K; the denoiser output has its average divergence
    subtracted out. The economy (pre-factorized) variant is deliberately not
    used: problem sizes here make the direct per-iteration solve cheap.
    """

    def _fit(self, H, noise_var):
        self._Hh_ = np.ascontiguousarray(H.conj().T)
        self._G_ = self._Hh_ @ H
        self._trG_ = float(np.trace(self._G_).real)

    def _detect(self, y):
        c = self.constellation_
        n0 = self.noise_var_
        K = self.k_
        tol = float(self.early_stop_tol)
        pv = c.prior_var
        eye = np.eye(K)
        x = np.zeros(K, dtype=np.complex128)
        vars_ = np.full(K, pv)
        nu2 = (float(np.vdot(y, y).real) - self.m_ * n0) / self._trG_
        nu2 = min(max(nu2, VAR_FLOOR), 10.0 * pv)
        z = x
        sigma2 = n0
        trace = [] if self.record_trace else None
        diverged = False
        iters = 0
        for t in range(1, int(self.max_iters) + 1):
            # Hermitian positive definite by construction; factor once per pass
            X = sla.cho_solve(sla.cho_factor(nu2 * self._G_ + n0 * eye,
                                             lower=True), self._Hh_)
            tr_ah = nu2 * float(np.einsum("km,mk->", X, self.H_).real)
            A = (K / tr_ah) * nu2 * X
            z = x + A @ (y - self.H_ @ x)
            AH = A @ self.H_
            sigma2 = (n0 * float(np.sum(np.abs(A) ** 2))
                      + nu2 * float(np.sum(np.abs(eye - AH) ** 2))) / K
            sigma2 = max(sigma2, 1e-30)
            means, vars_ = denoise_array(z, sigma2, c)
            eta = float(vars_.sum()) / (K * sigma2)
            denom = 1.0 - eta
            if abs(denom) < 1e-6:
                denom = math.copysign(1e-6, denom if denom != 0.0 else 1.0)
            x_new = (means - eta * z) / denom
            if not _finite(x_new, z):
                diverged = True
                break
            nu2 = (float(np.sum(np.abs(y - self.H_ @ x_new) ** 2)) - self.m_ * n0) / self._trG_
            nu2 = min(max(nu2, VAR_FLOOR), 10.0 * pv)
            dx = float(np.abs(x_new - x).max())
            x = x_new
            iters = t
            if trace is not None:
                trace.append(TraceEntry(
                    iteration=t, soft_means=x.copy(), soft_vars=vars_.copy(),
                    z=z.copy(), noise=sigma2,
                    gain_trace=float(np.trace(AH).real),
                ))
            if dx < tol:
                break
        hard = map_slice_array(z, sigma2, c)
        return DetectorOutput(
            soft_means=x, soft_vars=vars_, hard_symbols=hard,
            iters_used=max(iters, 1), trace=trace, diverged=diverged,
        )
