"""One-shot linear MMSE detection."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .base import DetectorOutput, MimoDetector


class LmmseDetector(MimoDetector):
    """Linear MMSE filter followed by nearest-point slicing.

    x_hat = (H^H H + N0 I)^{-1} H^H y for unit-energy symbols; each entry is
    then projected onto the nearest constellation point. ``soft_vars`` holds
    the per-user MMSE error variances N0 diag((H^H H + N0 I)^{-1}).
    """

    def _fit(self, H, noise_var):
        G = H.conj().T @ H
        G[np.diag_indices_from(G)] += noise_var
        self._chol_ = sla.cho_factor(G, lower=True)
        self._Hh_ = H.conj().T
        err = noise_var * sla.cho_solve(self._chol_, np.eye(self.k_))
        self._err_vars_ = np.clip(np.diag(err).real, 0.0, None)

    def _detect(self, y):
        xhat = sla.cho_solve(self._chol_, self._Hh_ @ y)
        c = self.constellation_
        # nearest-neighbor projection onto the alphabet
        hard = np.argmin(np.abs(xhat[:, None] - c.points[None, :]) ** 2, axis=1)
        return DetectorOutput(
            soft_means=xhat,
            soft_vars=self._err_vars_.copy(),
            hard_symbols=hard.astype(np.int64),
            iters_used=1,
        )
