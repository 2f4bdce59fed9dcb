"""Compiled inner loops for the sequential (Gauss-Seidel) detectors.

Per-user sweeps update a shared residual r = y - H <x> one coordinate at a
time, which cannot be vectorized across users; these kernels keep that loop
at compiled speed. Array layout contract: ``Hh`` holds conjugated channel
columns as contiguous rows (Hh[i, m] = conj(H[m, i])), so the per-user inner
products and residual updates both stream along rows.

The dense Hermitian build / Cholesky / solve kernels are deliberately plain
triple loops: their wall time tracks the flop count across problem sizes,
which keeps the cost model of every sweep transparent.
"""

import numpy as np
from numba import njit

_F = {"cache": True}
# reassociation-friendly math for the dense O(M^3)/O(M^2 K) kernels; the
# per-user sweeps keep strict FP semantics
_FDENSE = {"cache": True, "fastmath": True}


@njit(**_F)
def _denoise_point(z, s2, points, logp, pa2):
    # posterior mean/variance of one scalar AWGN observation, log-domain
    if s2 < 1e-30:
        s2 = 1e-30
    n = points.shape[0]
    best = -np.inf
    for a in range(n):
        d = z - points[a]
        e = logp[a] - (d.real * d.real + d.imag * d.imag) / s2
        if e > best:
            best = e
    zsum = 0.0
    mean = 0.0 + 0.0j
    m2 = 0.0
    for a in range(n):
        d = z - points[a]
        e = logp[a] - (d.real * d.real + d.imag * d.imag) / s2
        w = np.exp(e - best)
        zsum += w
        mean += w * points[a]
        m2 += w * pa2[a]
    mean /= zsum
    var = m2 / zsum - (mean.real * mean.real + mean.imag * mean.imag)
    if var < 0.0:
        var = 0.0
    return mean, var


@njit(**_F)
def seq_vb_sweep(Hh, hnorm2, noise, r, x, v, z_out, order, points, logp, pa2):
    """One user-by-user sweep of the matched-filter VB update.

    z_i = x_i + h_i^H r / ||h_i||^2, posterior at per-user level noise[i],
    residual maintained as r += h_i (x_i_old - x_i_new). ``order`` gives the
    processing schedule (natural 0..K-1 unless overridden). Returns the
    largest soft-mean change.
    """
    K, M = Hh.shape
    max_dx = 0.0
    for t in range(K):
        i = order[t]
        acc = 0.0 + 0.0j
        for m in range(M):
            acc += Hh[i, m] * r[m]
        z = x[i] + acc / hnorm2[i]
        z_out[i] = z
        mean, var = _denoise_point(z, noise[i], points, logp, pa2)
        d = x[i] - mean
        adx = np.abs(d)
        if adx > max_dx:
            max_dx = adx
        for m in range(M):
            r[m] += np.conj(Hh[i, m]) * d
        x[i] = mean
        v[i] = var
    return max_dx


@njit(**_F)
def mf_vb_iter(Hh, hnorm2, r, x, v, a0, b0, z_out, noise_out, order, points,
               logp, pa2):
    """One full iteration: refresh the postulated precision, then sweep.

    The precision mean is (a0 + M) / (b0 + ||r||^2 + sum_i ||h_i||^2 v_i);
    the trace term is the denoiser error power seen through the channel.
    """
    K, M = Hh.shape
    rn = 0.0
    for m in range(M):
        rn += r[m].real * r[m].real + r[m].imag * r[m].imag
    tr = 0.0
    for i in range(K):
        tr += hnorm2[i] * v[i]
    den = b0 + rn + tr
    if den < 1e-30:
        den = 1e-30
    gamma = (a0 + M) / den
    for i in range(K):
        noise_out[i] = 1.0 / (gamma * hnorm2[i])
    max_dx = seq_vb_sweep(Hh, hnorm2, noise_out, r, x, v, z_out, order,
                          points, logp, pa2)
    return max_dx, gamma


@njit(**_FDENSE)
def build_hermitian(H, w, diag):
    """B = H diag(w) H^H + diag * I, filled from the lower triangle."""
    M, K = H.shape
    B = np.empty((M, M), dtype=np.complex128)
    for a in range(M):
        for b in range(a + 1):
            acc = 0.0 + 0.0j
            for j in range(K):
                acc += w[j] * H[a, j] * np.conj(H[b, j])
            B[a, b] = acc
            B[b, a] = np.conj(acc)
        B[a, a] = B[a, a].real + diag
    return B


@njit(**_FDENSE)
def cholesky_lower(B):
    """In-place lower Cholesky factor of a Hermitian positive-definite B."""
    M = B.shape[0]
    for j in range(M):
        acc = B[j, j].real
        for k in range(j):
            acc -= B[j, k].real * B[j, k].real + B[j, k].imag * B[j, k].imag
        d = np.sqrt(acc)
        B[j, j] = d
        for i in range(j + 1, M):
            s = B[i, j]
            for k in range(j):
                s -= B[i, k] * np.conj(B[j, k])
            B[i, j] = s / d
    return B


@njit(**_FDENSE)
def solve_herm_rows(L, rhs_t):
    """Solve (L L^H) X = RHS where rhs_t holds RHS columns as rows.

    Returns the solution in the same transposed layout (row c is column c of
    the solution), keeping every substitution loop on contiguous memory.
    """
    n, M = rhs_t.shape
    out = rhs_t.copy()
    for c in range(n):
        for i in range(M):
            acc = out[c, i]
            for k in range(i):
                acc -= L[i, k] * out[c, k]
            out[c, i] = acc / L[i, i]
        for i in range(M - 1, -1, -1):
            acc = out[c, i]
            for k in range(i + 1, M):
                acc -= np.conj(L[k, i]) * out[c, k]
            out[c, i] = acc / L[i, i]
    return out


@njit(**_F)
def mf_vb_run(Hh, hnorm2, r, x, v, a0, b0, z_out, noise_out, order, points,
              logp, pa2, max_iters, tol):
    """Full detection loop for the trace-free path (same per-iteration math)."""
    iters = 0
    gamma = 0.0
    for _ in range(max_iters):
        max_dx, gamma = mf_vb_iter(Hh, hnorm2, r, x, v, a0, b0, z_out,
                                   noise_out, order, points, logp, pa2)
        iters += 1
        if max_dx < tol:
            break
    return iters, gamma


@njit(**_FDENSE)
def lmmse_vb_prepare(H, w, diag):
    """Fused build/factor/solve for the whitened filters W H.

    Equivalent to solve_herm_rows(cholesky_lower(build_hermitian(H, w, diag)),
    H.T) but with the substitutions done as row operations across all K
    right-hand sides, which vectorizes. Returns the filters as rows (K, M).
    """
    M, K = H.shape
    B = np.empty((M, M), dtype=np.complex128)
    for a in range(M):
        for b in range(a + 1):
            acc = 0.0 + 0.0j
            for j in range(K):
                acc += w[j] * H[a, j] * np.conj(H[b, j])
            B[a, b] = acc
            B[b, a] = np.conj(acc)
        B[a, a] = B[a, a].real + diag
    for j in range(M):
        acc = B[j, j].real
        for k in range(j):
            acc -= B[j, k].real * B[j, k].real + B[j, k].imag * B[j, k].imag
        d = np.sqrt(acc)
        B[j, j] = d
        for i in range(j + 1, M):
            s = B[i, j]
            for k in range(j):
                s -= B[i, k] * np.conj(B[j, k])
            B[i, j] = s / d
    X = H.copy()
    for i in range(M):
        for k in range(i):
            coef = B[i, k]
            for c in range(K):
                X[i, c] -= coef * X[k, c]
        d = B[i, i].real
        for c in range(K):
            X[i, c] /= d
    for i in range(M - 1, -1, -1):
        for k in range(i + 1, M):
            coef = np.conj(B[k, i])
            for c in range(K):
                X[i, c] -= coef * X[k, c]
        d = B[i, i].real
        for c in range(K):
            X[i, c] /= d
    vt = np.empty((K, M), dtype=np.complex128)
    for i in range(M):
        for c in range(K):
            vt[c, i] = X[i, c]
    return vt


@njit(**_F)
def lmmse_vb_sweep(Hh, vt, r, x, v, z_out, noise_out, order, points, logp, pa2):
    """Per-user sweep with the whitened filter w_i = W h_i (rows of vt).

    z_i = x_i + w_i^H r / (h_i^H w_i), per-user noise 1 / (h_i^H w_i).
    """
    K, M = Hh.shape
    max_dx = 0.0
    for t in range(K):
        i = order[t]
        d = 0.0
        acc = 0.0 + 0.0j
        for m in range(M):
            d += (Hh[i, m] * vt[i, m]).real
            acc += np.conj(vt[i, m]) * r[m]
        z = x[i] + acc / d
        z_out[i] = z
        noise_out[i] = 1.0 / d
        mean, var = _denoise_point(z, noise_out[i], points, logp, pa2)
        dx = x[i] - mean
        adx = np.abs(dx)
        if adx > max_dx:
            max_dx = adx
        for m in range(M):
            r[m] += np.conj(Hh[i, m]) * dx
        x[i] = mean
        v[i] = var
    return max_dx


@njit(**_F)
def mf_sic_sweep(Hh, hnorm2, g2, d0, r, x, v, z_out, noise_out, order, points,
                 logp, pa2):
    """Matched-filter soft interference cancellation, one sweep.

    d0[i] = Re(h_i^H C h_i) for the sweep-start covariance C; the running
    correction vector tracks the rank-one variance changes of already
    re-estimated users, so each user sees the current C_i at O(K) cost.
    """
    K, M = Hh.shape
    corr = np.zeros(K)
    max_dx = 0.0
    for t in range(K):
        i = order[t]
        ci = d0[i] + corr[i] - v[i] * hnorm2[i] * hnorm2[i]
        noise = ci / (hnorm2[i] * hnorm2[i])
        if noise < 1e-30:
            noise = 1e-30
        acc = 0.0 + 0.0j
        for m in range(M):
            acc += Hh[i, m] * r[m]
        z = x[i] + acc / hnorm2[i]
        z_out[i] = z
        noise_out[i] = noise
        mean, var = _denoise_point(z, noise, points, logp, pa2)
        dm = x[i] - mean
        dv = var - v[i]
        adx = np.abs(dm)
        if adx > max_dx:
            max_dx = adx
        for m in range(M):
            r[m] += np.conj(Hh[i, m]) * dm
        for j in range(K):
            corr[j] += dv * g2[j, i]
        x[i] = mean
        v[i] = var
    return max_dx


@njit(**_FDENSE)
def _rebuild_inverse(Hh, v, n0, cinv):
    K, M = Hh.shape
    C = np.empty((M, M), dtype=np.complex128)
    for a in range(M):
        for b in range(a + 1):
            acc = 0.0 + 0.0j
            for j in range(K):
                acc += v[j] * np.conj(Hh[j, a]) * Hh[j, b]
            C[a, b] = acc
            C[b, a] = np.conj(acc)
        C[a, a] = C[a, a].real + n0
    cinv[:, :] = np.linalg.inv(C)


@njit(**_F)
def lmmse_sic_sweep(Hh, cinv, r, x, v, n0, z_out, noise_out, order, points,
                    logp, pa2):
    """Whitening soft interference cancellation, one sweep.

    cinv is the inverse of the current residual interference-plus-noise
    covariance including every user's variance; user i's own term is removed
    analytically (Sherman-Morrison), and after re-estimation cinv absorbs the
    net variance change through one rank-one correction. When that correction
    is ill-conditioned (nearly singular covariance at vanishing noise), the
    inverse is rebuilt densely instead.
    """
    K, M = Hh.shape
    u = np.empty(M, dtype=np.complex128)
    max_dx = 0.0
    for t in range(K):
        i = order[t]
        for m in range(M):
            acc = 0.0 + 0.0j
            for l in range(M):
                acc += cinv[m, l] * np.conj(Hh[i, l])
            u[m] = acc
        g = 0.0
        ur = 0.0 + 0.0j
        for m in range(M):
            g += (Hh[i, m] * u[m]).real
            ur += np.conj(u[m]) * r[m]
        denom = 1.0 - v[i] * g
        z = x[i] + ur / g
        noise = denom / g
        if noise < 1e-30:
            noise = 1e-30
        z_out[i] = z
        noise_out[i] = noise
        mean, var = _denoise_point(z, noise, points, logp, pa2)
        dm = x[i] - mean
        dv = var - v[i]
        adx = np.abs(dm)
        if adx > max_dx:
            max_dx = adx
        for m in range(M):
            r[m] += np.conj(Hh[i, m]) * dm
        x[i] = mean
        v[i] = var
        sm = 1.0 + dv * g
        if np.abs(sm) > 1e-9:
            coef = dv / sm
            for a in range(M):
                ua = coef * u[a]
                for b in range(M):
                    cinv[a, b] -= ua * np.conj(u[b])
        else:
            _rebuild_inverse(Hh, v, n0, cinv)
    return max_dx


@njit(**_F)
def mf_vb_m_channel_sweep(hm, hhat, r, x, v, gamma, c0, hn2_out, s_out, order):
    """Refresh the per-user channel beliefs on the isotropic-error path.

    hm holds the channel means as rows (K, M). With error covariance s I the
    posterior is hm_i = s (gamma (y - sum_{j!=i} hm_j x_j) x_i^* + c0 hhat_i)
    with s = 1 / (gamma <|x_i|^2> + c0); c0 is the pilot-information constant.
    The residual r = y - hm^T x is kept consistent with the updated rows.
    """
    K, M = hm.shape
    for t in range(K):
        i = order[t]
        x2 = x[i].real * x[i].real + x[i].imag * x[i].imag + v[i]
        s = 1.0 / (gamma * x2 + c0)
        xc = np.conj(x[i])
        hn2 = 0.0
        for m in range(M):
            cancelled = r[m] + hm[i, m] * x[i]
            hnew = s * (gamma * cancelled * xc + c0 * hhat[i, m])
            r[m] += (hm[i, m] - hnew) * x[i]
            hm[i, m] = hnew
            hn2 += hnew.real * hnew.real + hnew.imag * hnew.imag
        hn2_out[i] = hn2
        s_out[i] = s


@njit(**_F)
def mf_vb_m_symbol_sweep(hm, hn2, tr_sigma, r, x, v, gamma, zt_out, noise_out,
                         order, points, logp, pa2):
    """Symbol sweep under channel uncertainty.

    The raw linear estimate z_i is shrunk by ||hm_i||^2 / (||hm_i||^2 + Tr S_i)
    and the per-user level is 1 / (gamma (||hm_i||^2 + Tr S_i)).
    """
    K, M = hm.shape
    max_dx = 0.0
    for t in range(K):
        i = order[t]
        acc = 0.0 + 0.0j
        for m in range(M):
            acc += np.conj(hm[i, m]) * r[m]
        z = x[i] + acc / hn2[i]
        w = hn2[i] + tr_sigma[i]
        zt = z * hn2[i] / w
        noise = 1.0 / (gamma * w)
        zt_out[i] = zt
        noise_out[i] = noise
        mean, var = _denoise_point(zt, noise, points, logp, pa2)
        d = x[i] - mean
        adx = np.abs(d)
        if adx > max_dx:
            max_dx = adx
        for m in range(M):
            r[m] += hm[i, m] * d
        x[i] = mean
        v[i] = var
    return max_dx
