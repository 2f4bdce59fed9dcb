"""Variational detectors with mean-field factorized posteriors.

Four detectors share the same skeleton: sequential per-user updates of the
symbol factors against a maintained residual r = y - H <x>, plus (except for
the known-noise variant) a once-per-iteration refresh of the postulated
noise statistic inferred by the factorization itself:

* ``ConvVbDetector``   - known noise variance; per-user level N0 / ||h_i||^2.
* ``MfVbDetector``     - scalar precision with a conjugate Gamma prior.
* ``LmmseVbDetector``  - full precision matrix with a conjugate Wishart prior.
* ``MfVbMDetector``    - joint channel/symbol/precision updates for detection
  from an imperfect channel estimate.

The per-user updates are Gauss-Seidel: each z_i uses the freshest soft means
of all other users, which is what the residual bookkeeping makes cheap.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .. import _kernels as knl
from ..channels import ChannelEstimate
from ..constellation import denoise, map_slice_array
from ..errors import ConfigurationError
from .base import (DetectorOutput, MimoDetector, TraceEntry,
                   check_received_vector, resolve_update_order)


def expected_residual_sq(y, a_mean, col_covs, x_mean, x_vars) -> float:
    """Mean of ||y - A x||^2 under independent factors for A's columns and x.

    ``col_covs`` gives the per-column covariance of A as a list of matrices,
    an array of traces, or None/zeros for a deterministic A (in which case
    this reduces to ||y - A <x>||^2 + Tr(A Sigma_x A^H)).
    """
    y = np.asarray(y, dtype=np.complex128)
    A = np.asarray(a_mean, dtype=np.complex128)
    xm = np.asarray(x_mean, dtype=np.complex128)
    xv = np.asarray(x_vars, dtype=np.float64)
    if np.any(xv < 0):
        raise ValueError("x_vars must be nonnegative")
    if col_covs is None:
        traces = np.zeros(A.shape[1])
    elif isinstance(col_covs, (list, tuple)):
        traces = np.array([float(np.trace(np.asarray(S)).real) for S in col_covs])
    else:
        traces = np.asarray(col_covs, dtype=np.float64)
    t1 = float(np.sum(np.abs(y - A @ xm) ** 2))
    t2 = float(np.sum(xv * np.sum(np.abs(A) ** 2, axis=0)))
    t3 = float(np.sum((np.abs(xm) ** 2 + xv) * traces))
    return t1 + t2 + t3


class _SeqVbBase(MimoDetector):
    """Shared driver for the sequential-sweep detectors with known H."""

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

    def _run(self, y, iterate):
        """iterate(t, r, x, v, z, noise) -> (max_dx, precision, rnorm2)."""
        c = self.constellation_
        tol = float(self.early_stop_tol)
        x = np.zeros(self.k_, dtype=np.complex128)
        v = np.full(self.k_, c.prior_var)
        r = y.copy()
        z = np.empty(self.k_, dtype=np.complex128)
        noise = np.empty(self.k_)
        trace = [] if self.record_trace else None
        iters = 0
        for t in range(1, int(self.max_iters) + 1):
            dx, precision, rnorm2 = iterate(t, r, x, v, z, noise)
            iters = t
            if trace is not None:
                drift = float(np.linalg.norm(r - (y - self.H_ @ x)))
                trace.append(TraceEntry(
                    iteration=t, soft_means=x.copy(), soft_vars=v.copy(),
                    z=z.copy(), noise=noise.copy(), precision=precision,
                    rnorm2=rnorm2, residual_drift=drift,
                ))
            if dx < tol:
                break
        hard = map_slice_array(z, noise, c)
        return DetectorOutput(
            soft_means=x, soft_vars=v, hard_symbols=hard,
            iters_used=iters, trace=trace, residual=r,
        )


class ConvVbDetector(_SeqVbBase):
    """Coordinate-ascent soft detection with the true noise variance.

    Each user sees the scalar channel z_i = x_i + h_i^H r / ||h_i||^2 at the
    fixed level N0 / ||h_i||^2, i.e. residual interference is not modeled.
    Kept as a baseline: ignoring that interference makes it markedly worse
    than the self-calibrating variants at high load.
    """

    def _detect(self, y):
        c = self.constellation_
        fixed_noise = np.ascontiguousarray(self.noise_var_ / self._hnorm2_)

        def iterate(t, r, x, v, z, noise):
            noise[:] = fixed_noise
            dx = knl.seq_vb_sweep(
                self._Hh_, self._hnorm2_, fixed_noise, r, x, v, z,
                self._order_, c.points, c.log_priors, c.abs2,
            )
            return dx, None, None

        return self._run(y, iterate)


class MfVbDetector(_SeqVbBase):
    """Matched-filter VB detection with an inferred scalar noise precision.

    The precision carries a conjugate Gamma(shape, rate) prior; the default
    improper (0, 0) prior turns the update into a point estimate
    1/gamma = (||r||^2 + sum_i ||h_i||^2 var_i) / M, refreshed once per
    iteration before the user sweep. The true noise variance is not an input.
    """

    requires_noise_var = False

    def __init__(self, constellation="qpsk", max_iters=50, early_stop_tol=1e-6,
                 record_trace=False, update_order=None, gamma_shape=0.0,
                 gamma_rate=0.0):
        super().__init__(constellation, max_iters, early_stop_tol, record_trace,
                         update_order)
        self.gamma_shape = gamma_shape
        self.gamma_rate = gamma_rate

    def _validate_config(self):
        super()._validate_config()
        if self.gamma_shape < 0 or self.gamma_rate < 0:
            raise ConfigurationError("gamma prior parameters must be >= 0")

    def _detect(self, y):
        c = self.constellation_
        a0 = float(self.gamma_shape)
        b0 = float(self.gamma_rate)

        if not self.record_trace:
            x = np.zeros(self.k_, dtype=np.complex128)
            v = np.full(self.k_, c.prior_var)
            r = y.copy()
            z = np.empty(self.k_, dtype=np.complex128)
            noise = np.empty(self.k_)
            iters, _ = knl.mf_vb_run(
                self._Hh_, self._hnorm2_, r, x, v, a0, b0, z, noise,
                self._order_, c.points, c.log_priors, c.abs2,
                int(self.max_iters), float(self.early_stop_tol),
            )
            hard = map_slice_array(z, noise, c)
            return DetectorOutput(soft_means=x, soft_vars=v, hard_symbols=hard,
                                  iters_used=iters, residual=r)

        def iterate(t, r, x, v, z, noise):
            dx, gamma = knl.mf_vb_iter(
                self._Hh_, self._hnorm2_, r, x, v, a0, b0, z, noise,
                self._order_, c.points, c.log_priors, c.abs2,
            )
            return dx, gamma, None

        return self._run(y, iterate)


class LmmseVbDetector(_SeqVbBase):
    """VB detection with an inferred noise precision matrix.

    Once per iteration the precision matrix is refreshed and each user is
    whitened with it: z_i = x_i + h_i^H W r / (h_i^H W h_i) at level
    1 / (h_i^H W h_i). With the default improper prior the estimator is

        W = ((||r||^2 / M) I + H Sigma_x H^H)^{-1},

    whose diagonal loading guarantees invertibility. A proper conjugate
    Wishart prior (scale W0 > 0, dof n >= M) switches to
    W = (n + 1)(W0^{-1} + r r^H + H Sigma_x H^H)^{-1}.
    """

    requires_noise_var = False

    def __init__(self, constellation="qpsk", max_iters=50, early_stop_tol=1e-6,
                 record_trace=False, update_order=None, wishart_scale=None,
                 wishart_dof=0):
        super().__init__(constellation, max_iters, early_stop_tol, record_trace,
                         update_order)
        self.wishart_scale = wishart_scale
        self.wishart_dof = wishart_dof

    def _fit(self, H, noise_var):
        super()._fit(H, noise_var)
        self._Hc_ = np.ascontiguousarray(H)
        self._Ht_ = np.ascontiguousarray(H.T)
        if self.wishart_scale is not None:
            W0 = np.asarray(self.wishart_scale, dtype=np.complex128)
            if W0.shape != (self.m_, self.m_):
                raise ConfigurationError("wishart_scale must be M x M")
            if int(self.wishart_dof) < self.m_:
                raise ConfigurationError("wishart_dof must be >= M for a proper prior")
            self._W0inv_ = np.linalg.inv(W0)
        else:
            self._W0inv_ = None

    def _detect(self, y):
        if self._W0inv_ is None:
            return self._run(y, self._iterate_improper(y))
        return self._run(y, self._iterate_wishart(y))

    def _iterate_improper(self, y):
        c = self.constellation_
        M = self.m_

        def iterate(t, r, x, v, z, noise):
            rnorm2 = float(np.vdot(r, r).real)
            vt = knl.lmmse_vb_prepare(self._Hc_, v, max(rnorm2, 1e-30) / M)
            dx = knl.lmmse_vb_sweep(
                self._Hh_, vt, r, x, v, z, noise,
                self._order_, c.points, c.log_priors, c.abs2,
            )
            return dx, None, rnorm2

        return iterate

    def _iterate_wishart(self, y):
        c = self.constellation_
        scale = float(self.wishart_dof) + 1.0

        def iterate(t, r, x, v, z, noise):
            rnorm2 = float(np.vdot(r, r).real)
            B = self._W0inv_ + np.outer(r, r.conj()) + (self.H_ * v) @ self._Hh_
            V = scale * sla.cho_solve(sla.cho_factor(B, lower=True), self.H_)
            dx = 0.0
            for i in self._order_:
                wi = V[:, i]
                d = float(np.vdot(self.H_[:, i], wi).real)
                z[i] = x[i] + np.vdot(wi, r) / d
                noise[i] = 1.0 / d
                res = denoise(z[i], noise[i], c)
                step = x[i] - res.mean
                dx = max(dx, abs(step))
                r += self.H_[:, i] * step
                x[i] = res.mean
                v[i] = res.variance
            return dx, None, rnorm2

        return iterate


class MfVbMDetector(MimoDetector):
    """Joint channel refinement and symbol detection from a pilot estimate.

    Fitted on a :class:`~vbmimo.channels.ChannelEstimate` rather than a known
    channel. Each iteration runs a full sweep of per-user channel-belief
    updates (pulling the mean between the pilot estimate and the data), a
    full symbol sweep against the refined means with the extra uncertainty
    Tr(Sigma_i) folded into the shrinkage and noise level, and one refresh of
    the inferred precision. When the estimation error covariance is isotropic
    every update is inversion-free.
    """

    requires_noise_var = False

    def __init__(self, constellation="qpsk", max_iters=50, early_stop_tol=1e-6,
                 record_trace=False, update_order=None, gamma_shape=0.0,
                 gamma_rate=0.0):
        super().__init__(constellation, max_iters, early_stop_tol, record_trace)
        self.update_order = update_order
        self.gamma_shape = gamma_shape
        self.gamma_rate = gamma_rate

    def _validate_config(self):
        super()._validate_config()
        if self.gamma_shape < 0 or self.gamma_rate < 0:
            raise ConfigurationError("gamma prior parameters must be >= 0")

    def fit(self, estimate: ChannelEstimate, noise_var=None):
        """Bind a pilot-phase channel estimate; returns self."""
        if not isinstance(estimate, ChannelEstimate):
            raise ConfigurationError(
                "MfVbMDetector.fit expects a ChannelEstimate (pilot-based CSIR)"
            )
        self._validate_config()
        self.constellation_ = self._resolve_constellation()
        self.estimate_ = estimate
        self.H_ = estimate.h_hat
        self.noise_var_ = estimate.noise_var
        self.m_, self.k_ = estimate.h_hat.shape
        self._order_ = resolve_update_order(self.update_order, self.k_)
        if estimate.iid_error_var is not None:
            # pilot-information constant Pp Tp / N0 + M = 1 / error variance
            self._c0_ = estimate.pilot_energy / estimate.noise_var + self.m_
            self._eig_ = None
        else:
            self._c0_ = None
            self._eig_ = []
            for i, Ki in enumerate(estimate.error_covs):
                lam, U = np.linalg.eigh(Ki)
                if lam.min() <= 0:
                    raise ValueError(
                        f"error covariance of user {i} is singular; "
                        "use the inversion-free estimator upstream"
                    )
                b = U @ ((U.conj().T @ estimate.h_hat[:, i]) / lam)
                self._eig_.append((lam, U, b))
        return self

    def detect(self, y) -> DetectorOutput:
        self._check_fitted()
        y = check_received_vector(y, self.m_)
        return self._detect(y)

    def _gamma(self, rnorm2, hn2, v, x2, tr_sigma):
        den = float(self.gamma_rate) + rnorm2 + float(hn2 @ v) + float(x2 @ tr_sigma)
        return (float(self.gamma_shape) + self.m_) / max(den, 1e-30)

    def _detect(self, y):
        c = self.constellation_
        est = self.estimate_
        tol = float(self.early_stop_tol)
        K, M = self.k_, self.m_
        fast = est.iid_error_var is not None

        hm = np.ascontiguousarray(est.h_hat.T)  # channel means as rows
        hhat_rows = hm.copy()
        x = np.zeros(K, dtype=np.complex128)
        v = np.full(K, c.prior_var)
        r = y.copy()
        zt = np.empty(K, dtype=np.complex128)
        noise = np.empty(K)
        hn2 = np.ascontiguousarray(np.sum(np.abs(hm) ** 2, axis=1))
        s_out = np.empty(K)
        if fast:
            tr_sigma = np.full(K, M * est.iid_error_var)
        else:
            tr_sigma = np.array([np.trace(Ki).real for Ki in est.error_covs])

        x2 = np.abs(x) ** 2 + v
        gamma = self._gamma(float(np.vdot(r, r).real), hn2, v, x2, tr_sigma)

        trace = [] if self.record_trace else None
        iters = 0
        for t in range(1, int(self.max_iters) + 1):
            if fast:
                knl.mf_vb_m_channel_sweep(hm, hhat_rows, r, x, v, gamma,
                                          self._c0_, hn2, s_out, self._order_)
                tr_sigma = M * s_out
            else:
                self._channel_sweep_general(hm, r, x, v, gamma, hn2, tr_sigma)
            dx = knl.mf_vb_m_symbol_sweep(
                hm, hn2, np.ascontiguousarray(tr_sigma), r, x, v, gamma,
                zt, noise, self._order_, c.points, c.log_priors, c.abs2,
            )
            x2 = np.abs(x) ** 2 + v
            rnorm2 = float(np.vdot(r, r).real)
            gamma = self._gamma(rnorm2, hn2, v, x2, tr_sigma)
            iters = t
            if trace is not None:
                drift = float(np.linalg.norm(r - (y - hm.T @ x)))
                trace.append(TraceEntry(
                    iteration=t, soft_means=x.copy(), soft_vars=v.copy(),
                    z=zt.copy(), noise=noise.copy(), precision=gamma,
                    rnorm2=rnorm2, residual_drift=drift,
                ))
            if dx < tol:
                break
        hard = map_slice_array(zt, noise, c)
        return DetectorOutput(
            soft_means=x, soft_vars=v, hard_symbols=hard,
            iters_used=iters, trace=trace, residual=r,
            channel_means=np.ascontiguousarray(hm.T),
        )

    def _channel_sweep_general(self, hm, r, x, v, gamma, hn2, tr_sigma):
        # anisotropic error covariances: work in each K_i eigenbasis
        for i in self._order_:
            lam, U, b = self._eig_[i]
            x2 = abs(x[i]) ** 2 + v[i]
            t_vec = r + hm[i] * x[i]
            w = gamma * t_vec * np.conj(x[i]) + b
            d = gamma * x2 + 1.0 / lam
            h_new = U @ ((U.conj().T @ w) / d)
            tr_sigma[i] = float(np.sum(1.0 / d))
            r += (hm[i] - h_new) * x[i]
            hm[i] = h_new
            hn2[i] = float(np.sum(np.abs(h_new) ** 2))
