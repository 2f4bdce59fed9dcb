"""Iterative soft interference cancellation detectors.

Both detectors sweep the users sequentially (index order 1..K), cancel the
current soft means of the interferers, and re-estimate each symbol against
the residual interference-plus-noise covariance

    C_i = sum_{j != i} var_j h_j h_j^H + N0 I,

rebuilt from the latest soft variances at every user update. The matched
filter variant combines with h_i^H / ||h_i||^2; the whitening variant applies
C_i^{-1} first. Rank-one bookkeeping keeps the per-user cost at O(K) and
O(M^2) respectively instead of rebuilding C_i from scratch.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels as knl
from ..constellation import map_slice_array
from .base import (DetectorOutput, MimoDetector, TraceEntry,
                   resolve_update_order)


class _SicBase(MimoDetector):
    def __init__(self, constellation="qpsk", max_iters=50, early_stop_tol=1e-6,
                 record_trace=False, update_order=None):
        super().__init__(constellation, max_iters, early_stop_tol, record_trace)
        self.update_order = update_order

    def _fit(self, H, noise_var):
        self._Hh_ = np.ascontiguousarray(H.conj().T)
        self._hnorm2_ = np.ascontiguousarray(np.sum(np.abs(H) ** 2, axis=0))
        if self._hnorm2_.min() <= 0.0:
            raise ValueError("channel matrix has an all-zero column")
        self._order_ = resolve_update_order(self.update_order, self.k_)

    def _init_state(self, y):
        c = self.constellation_
        x = np.zeros(self.k_, dtype=np.complex128)
        v = np.full(self.k_, c.prior_var)
        r = y.copy()
        z = np.empty(self.k_, dtype=np.complex128)
        noise = np.empty(self.k_)
        return x, v, r, z, noise

    def _run(self, y, sweep):
        c = self.constellation_
        tol = float(self.early_stop_tol)
        x, v, r, z, noise = self._init_state(y)
        trace = [] if self.record_trace else None
        iters = 0
        for t in range(1, int(self.max_iters) + 1):
            dx = sweep(r, x, v, z, noise)
            iters = t
            if trace is not None:
                drift = float(np.linalg.norm(r - (y - self.H_ @ x)))
                trace.append(TraceEntry(
                    iteration=t, soft_means=x.copy(), soft_vars=v.copy(),
                    z=z.copy(), noise=noise.copy(), residual_drift=drift,
                ))
            if dx < tol:
                break
        hard = map_slice_array(z, noise, c)
        return DetectorOutput(
            soft_means=x, soft_vars=v, hard_symbols=hard,
            iters_used=iters, trace=trace, residual=r,
        )


class MfSicDetector(_SicBase):
    """Matched-filter SIC: per-user level h_i^H C_i h_i / ||h_i||^4."""

    def _fit(self, H, noise_var):
        super()._fit(H, noise_var)
        G = self._Hh_ @ H
        self._G2_ = np.ascontiguousarray(np.abs(G) ** 2)

    def _detect(self, y):
        c = self.constellation_
        H = self.H_

        def sweep(r, x, v, z, noise):
            # d0[i] = Re(h_i^H C h_i) with C from the sweep-start variances
            C = (H * v) @ self._Hh_
            C[np.diag_indices_from(C)] += self.noise_var_
            d0 = np.ascontiguousarray(
                np.einsum("mi,mi->i", H.conj(), C @ H).real
            )
            return knl.mf_sic_sweep(
                self._Hh_, self._hnorm2_, self._G2_, d0, r, x, v, z, noise,
                self._order_, c.points, c.log_priors, c.abs2,
            )

        return self._run(y, sweep)


class LmmseSicDetector(_SicBase):
    """Whitening SIC: z_i = h_i^H C_i^{-1}(.) / (h_i^H C_i^{-1} h_i).

    C_i^{-1} never needs a fresh factorization per user: the inverse of the
    full covariance is refreshed once per sweep and carried through the sweep
    by rank-one (Sherman-Morrison) corrections, preserving O(M^2) per user.
    """

    def _detect(self, y):
        c = self.constellation_
        H = self.H_

        def sweep(r, x, v, z, noise):
            C = (H * v) @ self._Hh_
            C[np.diag_indices_from(C)] += self.noise_var_
            cinv = np.linalg.inv(C)
            cinv = np.ascontiguousarray(0.5 * (cinv + cinv.conj().T))
            return knl.lmmse_sic_sweep(
                self._Hh_, cinv, r, x, v, self.noise_var_, z, noise,
                self._order_, c.points, c.log_priors, c.abs2,
            )

        return self._run(y, sweep)
