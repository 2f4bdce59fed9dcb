"""Soft interference cancellation detectors."""

import numpy as np
import pytest
from util import reference_sic_sweep

from vbmimo import (ConvVbDetector, LmmseSicDetector, MfSicDetector,
                    gen_iid_channel, make_constellation, noise_var_for_snr)
from vbmimo.channels import crandn
from vbmimo import _kernels as knl


def _instance(seed, m, k, snr_db):
    rng = np.random.default_rng(seed)
    c = make_constellation("qpsk")
    sc = gen_iid_channel(m, k, rng)
    n0 = noise_var_for_snr(snr_db, m, k)
    x_idx = rng.integers(0, c.size, k)
    y = sc.H @ c.points[x_idx] + np.sqrt(n0) * crandn(rng, m)
    return c, sc.H, n0, x_idx, y


class TestMfSic:
    def test_single_user_matched_filter(self):
        rng = np.random.default_rng(0)
        c = make_constellation("qpsk")
        h = crandn(rng, 8)
        n0 = 0.05
        x_idx = 3
        y = h * c.points[x_idx] + np.sqrt(n0) * crandn(rng, 8)
        det = MfSicDetector(constellation=c, max_iters=1, record_trace=True)
        out = det.fit(h[:, None], n0).detect(y)
        hn2 = float(np.sum(np.abs(h) ** 2))
        z_ref = np.vdot(h, y) / hn2
        assert abs(out.trace[0].z[0] - z_ref) < 1e-12
        # with no interferers C_1 = N0 I, so the level is N0 / ||h||^2
        assert out.trace[0].noise[0] == pytest.approx(n0 / hn2, rel=1e-12)

    def test_zero_variance_state_matches_known_noise_sweep(self):
        # with all soft variances pinned at zero the residual covariance
        # collapses to N0 I and the sweep must coincide with the known-noise
        # coordinate-ascent sweep
        c, H, n0, x_idx, _ = _instance(1, 6, 4, 25.0)
        y = H @ c.points[x_idx]  # noiseless so variances stay at zero
        Hh = np.ascontiguousarray(H.conj().T)
        hnorm2 = np.ascontiguousarray(np.sum(np.abs(H) ** 2, axis=0))
        order = np.arange(4, dtype=np.int64)
        g2 = np.ascontiguousarray(np.abs(Hh @ H) ** 2)

        x1 = c.points[x_idx].copy()
        v1 = np.zeros(4)
        r1 = y - H @ x1
        z1 = np.empty(4, dtype=complex)
        n1 = np.empty(4)
        C = n0 * np.eye(6, dtype=complex)
        d0 = np.ascontiguousarray(
            np.einsum("mi,mi->i", H.conj(), C @ H).real)
        knl.mf_sic_sweep(Hh, hnorm2, g2, d0, r1, x1, v1, z1, n1, order,
                         c.points, c.log_priors, c.abs2)

        x2 = c.points[x_idx].copy()
        v2 = np.zeros(4)
        r2 = y - H @ x2
        z2 = np.empty(4, dtype=complex)
        fixed = np.ascontiguousarray(n0 / hnorm2)
        knl.seq_vb_sweep(Hh, hnorm2, fixed, r2, x2, v2, z2, order,
                         c.points, c.log_priors, c.abs2)

        np.testing.assert_allclose(n1, n0 / hnorm2, rtol=1e-9)
        np.testing.assert_allclose(z1, z2, atol=1e-10)

    def test_single_sweep_matches_dense_oracle(self):
        c, H, n0, x_idx, y = _instance(2, 4, 4, 10.0)
        det = MfSicDetector(constellation=c, max_iters=1, record_trace=True)
        out = det.fit(H, n0).detect(y)
        pv = c.prior_var
        x_ref, v_ref, z_ref, noise_ref = reference_sic_sweep(
            y, H, n0, c.points, c.priors, np.zeros(4, complex),
            np.full(4, pv), "mf")
        np.testing.assert_allclose(out.trace[0].z, z_ref, atol=1e-10)
        np.testing.assert_allclose(out.trace[0].noise, noise_ref, atol=1e-10)
        np.testing.assert_allclose(out.soft_means, x_ref, atol=1e-10)
        np.testing.assert_allclose(out.soft_vars, v_ref, atol=1e-10)


class TestLmmseSic:
    def test_single_sweep_matches_dense_oracle(self):
        c, H, n0, x_idx, y = _instance(3, 4, 4, 10.0)
        det = LmmseSicDetector(constellation=c, max_iters=1, record_trace=True)
        out = det.fit(H, n0).detect(y)
        pv = c.prior_var
        x_ref, v_ref, z_ref, noise_ref = reference_sic_sweep(
            y, H, n0, c.points, c.priors, np.zeros(4, complex),
            np.full(4, pv), "lmmse")
        np.testing.assert_allclose(out.trace[0].z, z_ref, atol=1e-10)
        np.testing.assert_allclose(out.trace[0].noise, noise_ref, atol=1e-10)
        np.testing.assert_allclose(out.soft_means, x_ref, atol=1e-10)

    def test_multi_sweep_matches_dense_oracle(self):
        c, H, n0, x_idx, y = _instance(4, 6, 4, 9.0)
        sweeps = 3
        det = LmmseSicDetector(constellation=c, max_iters=sweeps,
                               early_stop_tol=0.0, record_trace=True)
        out = det.fit(H, n0).detect(y)
        x = np.zeros(4, complex)
        v = np.full(4, c.prior_var)
        for _ in range(sweeps):
            x, v, z_ref, noise_ref = reference_sic_sweep(
                y, H, n0, c.points, c.priors, x, v, "lmmse")
        np.testing.assert_allclose(out.soft_means, x, atol=1e-9)
        np.testing.assert_allclose(out.trace[-1].noise, noise_ref, atol=1e-9)

    def test_zero_variance_reduces_to_matched_filter(self):
        c, H, n0, x_idx, _ = _instance(5, 6, 4, 25.0)
        y = H @ c.points[x_idx]
        x0 = c.points[x_idx]
        _, _, z_mf, _ = reference_sic_sweep(y, H, n0, c.points, c.priors,
                                            x0.copy(), np.zeros(4), "mf")
        _, _, z_w, noise_w = reference_sic_sweep(y, H, n0, c.points, c.priors,
                                                 x0.copy(), np.zeros(4), "lmmse")
        np.testing.assert_allclose(z_w, z_mf, atol=1e-10)
        hnorm2 = np.sum(np.abs(H) ** 2, axis=0)
        np.testing.assert_allclose(noise_w, n0 / hnorm2, rtol=1e-9)

    def test_whitened_level_never_worse_than_matched_filter(self):
        # 1/(h^H C^{-1} h) <= h^H C h / ||h||^4 for the same C (Cauchy-Schwarz)
        rng = np.random.default_rng(6)
        for _ in range(25):
            m = int(rng.integers(2, 9))
            h = crandn(rng, m)
            A = crandn(rng, m, m)
            C = A @ A.conj().T + 0.1 * np.eye(m)
            lhs = 1.0 / float((h.conj() @ np.linalg.solve(C, h)).real)
            rhs = float((h.conj() @ C @ h).real) / np.sum(np.abs(h) ** 2) ** 2
            assert lhs <= rhs * (1 + 1e-10)

    def test_single_user_all_variants_coincide(self):
        rng = np.random.default_rng(7)
        c = make_constellation("qpsk")
        h = crandn(rng, 8)
        n0 = 0.1
        y = h * c.points[1] + np.sqrt(n0) * crandn(rng, 8)
        cfg = dict(constellation=c, max_iters=6, early_stop_tol=0.0)
        outs = [cls(**cfg).fit(h[:, None], n0).detect(y)
                for cls in (MfSicDetector, LmmseSicDetector, ConvVbDetector)]
        for out in outs[1:]:
            np.testing.assert_allclose(out.soft_means, outs[0].soft_means,
                                       atol=1e-12)
            np.testing.assert_allclose(out.soft_vars, outs[0].soft_vars,
                                       atol=1e-12)
            np.testing.assert_array_equal(out.hard_symbols, outs[0].hard_symbols)

    def test_detects_well_at_moderate_snr(self):
        errs = 0
        for seed in range(20):
            c, H, n0, x_idx, y = _instance(100 + seed, 16, 8, 12.0)
            out = LmmseSicDetector(constellation=c).fit(H, n0).detect(y)
            errs += int(np.sum(out.hard_symbols != x_idx))
        assert errs <= 2
