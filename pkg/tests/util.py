"""Independent reference implementations used as test oracles.

Everything here is written from the defining formulas with plain loops and
dense linear algebra, deliberately not sharing code with the package.
"""

import math

import numpy as np


def brute_posterior(z, sigma2, points, priors):
    """Direct per-point posterior: pmf, mean, variance.

    Plain Python loop; the only numerical care taken is the exact max-shift
    identity exp(e) = exp(e - m) * exp(m) before normalization.
    """
    z = complex(z)
    exps = []
    for a, p in zip(points, priors):
        d = z - complex(a)
        e = (math.log(p) if p > 0 else -math.inf) - (d.real**2 + d.imag**2) / sigma2
        exps.append(e)
    shift = max(exps)
    weights = [math.exp(e - shift) for e in exps]
    total = sum(weights)
    pmf = [w / total for w in weights]
    mean = sum(p * complex(a) for p, a in zip(pmf, points))
    second = sum(p * abs(complex(a)) ** 2 for p, a in zip(pmf, points))
    var = second - abs(mean) ** 2
    return np.array(pmf), mean, max(var, 0.0)


def brute_map(z, sigma2, points, priors):
    """argmax of log p_a - |z - a|^2 / sigma2, first index on ties."""
    best, best_idx = -math.inf, 0
    for idx, (a, p) in enumerate(zip(points, priors)):
        d = complex(z) - complex(a)
        e = (math.log(p) if p > 0 else -math.inf) - (d.real**2 + d.imag**2) / sigma2
        if e > best:
            best, best_idx = e, idx
    return best_idx


def reference_amp(y, H, n0, points, priors, n_iters):
    """Literal five-line AMP loop with the brute-force denoiser."""
    M, K = H.shape
    beta = K / M
    prior_mean = sum(p * complex(a) for p, a in zip(priors, points))
    prior_var = sum(p * abs(complex(a)) ** 2 for p, a in zip(priors, points)) \
        - abs(prior_mean) ** 2
    x = np.full(K, prior_mean, dtype=complex)
    r = y.astype(complex).copy()
    nu2 = prior_var
    z = x
    sigma2 = n0 + beta * nu2
    for _ in range(n_iters):
        z = x + H.conj().T @ r
        sigma2 = n0 + beta * nu2
        means = np.empty(K, dtype=complex)
        gs = np.empty(K)
        for i in range(K):
            _, means[i], gs[i] = brute_posterior(z[i], sigma2, points, priors)
        nu2_new = float(np.mean(gs))
        r = y - H @ means + beta * (nu2_new / sigma2) * r
        x = means
        nu2 = nu2_new
    return x, z, sigma2


def reference_mf_vb(y, H, points, priors, n_iters, a0=0.0, b0=0.0):
    """Transcript of the inferred-precision matched-filter sweeps."""
    M, K = H.shape
    prior_var = sum(p * abs(complex(a)) ** 2 for p, a in zip(priors, points))
    x = np.zeros(K, dtype=complex)
    v = np.full(K, prior_var)
    r = y.astype(complex).copy()
    hnorm2 = np.sum(np.abs(H) ** 2, axis=0)
    zs = np.empty(K, dtype=complex)
    noises = np.empty(K)
    gammas = []
    for _ in range(n_iters):
        tr = float(np.sum(hnorm2 * v))
        gamma = (a0 + M) / (b0 + float(np.sum(np.abs(r) ** 2)) + tr)
        gammas.append(gamma)
        for i in range(K):
            zs[i] = x[i] + np.vdot(H[:, i], r) / hnorm2[i]
            noises[i] = 1.0 / (gamma * hnorm2[i])
            _, mean, var = brute_posterior(zs[i], noises[i], points, priors)
            r += H[:, i] * (x[i] - mean)
            x[i] = mean
            v[i] = var
    return x, v, zs, noises, gammas


def reference_lmmse_vb(y, H, points, priors, n_iters):
    """Transcript of the inferred-precision-matrix sweeps, dense solves."""
    M, K = H.shape
    prior_var = sum(p * abs(complex(a)) ** 2 for p, a in zip(priors, points))
    x = np.zeros(K, dtype=complex)
    v = np.full(K, prior_var)
    r = y.astype(complex).copy()
    zs = np.empty(K, dtype=complex)
    noises = np.empty(K)
    Ws = []
    for _ in range(n_iters):
        rn2 = float(np.sum(np.abs(r) ** 2))
        B = (rn2 / M) * np.eye(M) + (H * v) @ H.conj().T
        W = np.linalg.inv(B)
        Ws.append(W)
        for i in range(K):
            hi = H[:, i]
            d = float((hi.conj() @ W @ hi).real)
            zs[i] = x[i] + (hi.conj() @ W @ r) / d
            noises[i] = 1.0 / d
            _, mean, var = brute_posterior(zs[i], noises[i], points, priors)
            r += hi * (x[i] - mean)
            x[i] = mean
            v[i] = var
    return x, v, zs, noises, Ws


def reference_sic_sweep(y, H, n0, points, priors, x0, v0, kind):
    """One soft interference cancellation sweep with dense C_i per user."""
    M, K = H.shape
    x = x0.astype(complex).copy()
    v = v0.astype(float).copy()
    zs = np.empty(K, dtype=complex)
    noises = np.empty(K)
    for i in range(K):
        Ci = n0 * np.eye(M, dtype=complex)
        for j in range(K):
            if j != i:
                Ci += v[j] * np.outer(H[:, j], H[:, j].conj())
        cancelled = y - sum(H[:, j] * x[j] for j in range(K) if j != i)
        hi = H[:, i]
        if kind == "mf":
            zs[i] = (hi.conj() @ cancelled) / np.sum(np.abs(hi) ** 2)
            noises[i] = float((hi.conj() @ Ci @ hi).real) / np.sum(np.abs(hi) ** 2) ** 2
        else:
            u = np.linalg.solve(Ci, hi)
            g = float((hi.conj() @ u).real)
            zs[i] = (u.conj() @ cancelled) / g
            noises[i] = 1.0 / g
        _, mean, var = brute_posterior(zs[i], noises[i], points, priors)
        x[i] = mean
        v[i] = var
    return x, v, zs, noises


def ser_standard_error(errors: int, symbols: int) -> float:
    """Binomial standard error of an SER estimate (floored away from zero)."""
    p = max(errors, 1) / symbols
    return math.sqrt(p * (1.0 - p) / symbols)
