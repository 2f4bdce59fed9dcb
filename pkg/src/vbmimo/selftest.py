"""Randomized invariant suite behind the ``selftest`` CLI subcommand.

Each instance draws a fresh channel/symbol/noise realization, runs every
detector with tracing enabled, and checks the structural invariants the
algorithms are supposed to maintain:

* residual bookkeeping stays consistent with y - H <x> after every sweep;
* the inferred noise precision stays positive;
* the inferred precision matrix stays positive definite;
* the residual interference-plus-noise covariance dominates N0 I;
* permuting the users permutes the outputs (exactly for the parallel-update
  detectors; at the converged fixed point for the sequential ones, whose
  intermediate iterates legitimately depend on the sweep order);
* identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import (crandn, gen_iid_channel, make_orthogonal_pilots,
                       mmse_channel_estimate, noise_var_for_snr)
from .constellation import make_constellation
from .detectors import make_detector
from .harness import ExperimentSpec, run_trial

SEQUENTIAL = ("mf-sic", "lmmse-sic", "conv-vb", "mf-vb", "lmmse-vb")
PARALLEL = ("lmmse", "amp", "oamp-vamp")

INVARIANTS = (
    "residual_consistency",
    "gamma_positivity",
    "w_positive_definite",
    "ci_dominates_noise",
    "permutation_equivariance",
    "determinism_under_seed",
)


@dataclass
class InvariantResult:
    name: str
    passed: bool
    detail: str


class _Failures:
    def __init__(self):
        self.notes: dict[str, list[str]] = {name: [] for name in INVARIANTS}
        self.extreme: dict[str, float] = {}

    def check(self, invariant: str, ok: bool, note: str):
        if not ok:
            self.notes[invariant].append(note)

    def track(self, invariant: str, value: float):
        prev = self.extreme.get(invariant, -np.inf)
        if value > prev:
            self.extreme[invariant] = value


def _instance(rng, case: int):
    m = k = int(rng.choice([4, 8, 12, 16]))
    mod = "qpsk" if case % 3 else "16qam"
    snr_db = float(rng.uniform(8.0, 14.0))
    c = make_constellation("qpsk") if mod == "qpsk" else make_constellation("qam", 16)
    n0 = noise_var_for_snr(snr_db, m, k)
    scenario = gen_iid_channel(m, k, rng)
    scenario.n0 = n0
    x_idx = rng.integers(0, c.size, size=k)
    y = scenario.H @ c.points[x_idx] + np.sqrt(n0) * crandn(rng, m)
    pilots = make_orthogonal_pilots(k, k, 1.0)
    y_p = scenario.H @ pilots + np.sqrt(n0) * crandn(rng, m, k)
    estimate = mmse_channel_estimate(y_p, pilots, scenario.R, n0)
    return c, scenario, y, estimate


def _fit_detect(name, c, scenario, y, estimate, **cfg):
    det = make_detector(name, constellation=c, **cfg)
    if name == "mf-vb-m":
        det.fit(estimate)
    elif det.requires_noise_var:
        det.fit(scenario.H, scenario.n0)
    else:
        det.fit(scenario.H)
    return det.detect(y)


def _check_traces(fails, name, out, y, c, scenario):
    ynorm = float(np.linalg.norm(y))
    if name in ("conv-vb", "mf-vb", "lmmse-vb", "mf-vb-m"):
        for entry in out.trace:
            drift = entry.residual_drift
            fails.track("residual_consistency", drift / (ynorm + 1.0))
            fails.check("residual_consistency", drift <= 1e-8 * (ynorm + 1.0),
                        f"{name}: drift {drift:.2e} at iter {entry.iteration}")
    if name in ("mf-vb", "mf-vb-m"):
        for entry in out.trace:
            fails.check("gamma_positivity", entry.precision > 0.0,
                        f"{name}: precision {entry.precision} at iter {entry.iteration}")
    if name == "lmmse-vb":
        m = scenario.m
        prev_vars = np.full(scenario.k, c.prior_var)
        for entry in out.trace:
            load = max(entry.rnorm2, 1e-30) / m
            B = (scenario.H * prev_vars) @ scenario.H.conj().T + load * np.eye(m)
            lam_min = float(np.linalg.eigvalsh(B).min())
            fails.check("w_positive_definite", lam_min >= load * (1.0 - 1e-10),
                        f"lmmse-vb: min eig {lam_min:.2e} < load {load:.2e}")
            prev_vars = entry.soft_vars


def _check_ci(fails, name, out, scenario):
    H, n0 = scenario.H, scenario.n0
    v = out.soft_vars
    for i in range(scenario.k):
        w = v.copy()
        w[i] = 0.0
        Ci = (H * w) @ H.conj().T + n0 * np.eye(scenario.m)
        lam_min = float(np.linalg.eigvalsh(Ci).min())
        fails.check("ci_dominates_noise", lam_min >= n0 * (1.0 - 1e-10),
                    f"{name}: min eig(C_{i}) = {lam_min:.3e} < N0 = {n0:.3e}")


def _check_permutation(fails, rng, c, scenario, y, estimate):
    # Parallel (Jacobi) detectors are order-free, so permuting users must
    # permute their outputs directly; a short fixed budget keeps benign
    # floating-point noise from being amplified by non-contractive instances.
    # The sequential (Gauss-Seidel) detectors carry a processing schedule:
    # permuting users while the schedule follows the same permutation must
    # reproduce the permuted outputs (intermediate iterates under a *fixed*
    # schedule legitimately depend on the visiting order).
    k = scenario.k
    perm = rng.permutation(k)

    def permuted_inputs():
        return scenario.__class__(H=scenario.H[:, perm],
                                  R=[scenario.R[p] for p in perm],
                                  n0=scenario.n0)

    for name in PARALLEL:
        cfg = dict(max_iters=15, early_stop_tol=0.0)
        base = _fit_detect(name, c, scenario, y, estimate, **cfg)
        permuted = _fit_detect(name, c, permuted_inputs(), y, estimate, **cfg)
        ok_hard = np.array_equal(permuted.hard_symbols, base.hard_symbols[perm])
        err = float(np.abs(permuted.soft_means - base.soft_means[perm]).max())
        fails.track("permutation_equivariance", err)
        fails.check("permutation_equivariance", ok_hard and err < 1e-8,
                    f"{name}: soft mismatch {err:.2e}, hard match {ok_hard}")
    est_perm = type(estimate)(
        h_hat=estimate.h_hat[:, perm], error_covs=None,
        iid_error_var=estimate.iid_error_var,
        pilot_power=estimate.pilot_power, pilot_len=estimate.pilot_len,
        noise_var=estimate.noise_var)
    cfg = dict(max_iters=8, early_stop_tol=0.0)
    for name in SEQUENTIAL + ("mf-vb-m",):
        # base visits user perm[0] first, ..., matching the permuted problem's
        # natural schedule; outputs must then be the permuted base outputs.
        base = _fit_detect(name, c, scenario, y, estimate,
                           update_order=perm, **cfg)
        permuted = _fit_detect(name, c, permuted_inputs(), y, est_perm,
                               update_order=None, **cfg)
        ok_hard = np.array_equal(permuted.hard_symbols, base.hard_symbols[perm])
        err = float(np.abs(permuted.soft_means - base.soft_means[perm]).max())
        fails.track("permutation_equivariance", err)
        fails.check("permutation_equivariance", ok_hard and err < 1e-8,
                    f"{name}: relabeled soft mismatch {err:.2e}, hard match {ok_hard}")


def _check_determinism(fails, name, c, scenario, y, estimate, out):
    again = _fit_detect(name, c, scenario, y, estimate, record_trace=True)
    same = (np.array_equal(again.soft_means, out.soft_means)
            and np.array_equal(again.soft_vars, out.soft_vars)
            and np.array_equal(again.hard_symbols, out.hard_symbols)
            and again.iters_used == out.iters_used)
    fails.check("determinism_under_seed", same, f"{name}: outputs differ on rerun")


def run_selftest(instances: int = 100, seed: int = 20240, progress=None):
    """Run the invariant suite on ``instances`` randomized cases."""
    rng = np.random.default_rng(seed)
    fails = _Failures()
    names = ("lmmse", "amp", "oamp-vamp", "mf-sic", "lmmse-sic", "conv-vb",
             "mf-vb", "lmmse-vb", "mf-vb-m")
    for case in range(instances):
        c, scenario, y, estimate = _instance(rng, case)
        for name in names:
            out = _fit_detect(name, c, scenario, y, estimate, record_trace=True)
            _check_traces(fails, name, out, y, c, scenario)
            if name in ("mf-sic", "lmmse-sic"):
                _check_ci(fails, name, out, scenario)
            if case % 10 == 0:
                _check_determinism(fails, name, c, scenario, y, estimate, out)
        if case % 5 == 0:
            _check_permutation(fails, rng, c, scenario, y, estimate)
        if progress is not None:
            progress(case + 1, instances)

    # harness-level determinism: same derived seed, same counts
    spec = ExperimentSpec(m=8, k=8, snr_db_grid=(10.0,), trials=1,
                          detectors=("lmmse", "mf-vb"), base_seed=7)
    r1 = run_trial(spec, 10.0, 3)
    r2 = run_trial(spec, 10.0, 3)
    fails.check("determinism_under_seed", r1 == r2,
                "run_trial: repeated call changed results")

    results = []
    for name in INVARIANTS:
        notes = fails.notes[name]
        if notes:
            detail = f"{len(notes)} failure(s); first: {notes[0]}"
        else:
            detail = "ok"
            if name in fails.extreme:
                detail = f"ok (worst observed {fails.extreme[name]:.2e})"
        results.append(InvariantResult(name=name, passed=not notes, detail=detail))
    return results
