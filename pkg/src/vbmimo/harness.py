"""Monte-Carlo experiment engine: trials, SER aggregation, CSV output.

Reproducibility contract: every (SNR point, trial index) cell derives its own
random stream from the experiment base seed via a counter-style spawn key, so
results are identical no matter how trials are scheduled or parallelized.
Within one trial, every requested detector sees the same realization of
(symbols, channel, noise) - paired comparisons sharpen detector orderings at
desk-scale trial counts.

The worker pool size comes from the ``VBMIMO_WORKERS`` environment variable
(default: the number of processors).
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from .channels import (covariance_factor, crandn, exp_corr_covariance,
                       gen_correlated_channel, gen_iid_channel,
                       make_orthogonal_pilots, mmse_channel_estimate,
                       noise_var_for_snr)
from .constellation import constellation_from_label, map_slice_array
from .detectors import DETECTOR_NAMES, make_detector
from .errors import ConfigurationError

CSV_COLUMNS = ("detector", "M", "K", "mod", "channel", "csir", "snr_db",
               "trials", "symbols_sent", "symbol_errors", "ser", "mean_iters",
               "wall_ms")

CONVERGENCE_CSV_COLUMNS = ("detector", "snr_db", "iteration", "ser")


@dataclass(frozen=True)
class ExperimentSpec:
    """Full description of one Monte-Carlo sweep."""

    m: int = 32
    k: int = 32
    modulation: str = "qpsk"
    channel: str = "iid"            # "iid" | "exp"
    alpha: complex | None = None    # exp-model correlation coefficient
    csir: str = "perfect"           # "perfect" | "pilot"
    pilot_power: float = 1.0
    pilot_len: int | None = None
    snr_db_grid: tuple[float, ...] = (10.0,)
    detectors: tuple[str, ...] = DETECTOR_NAMES
    trials: int = 1000
    base_seed: int = 0
    max_iters: int = 50
    early_stop_tol: float = 1e-6
    record_convergence: bool = False

    @property
    def channel_label(self) -> str:
        return f"exp({self.alpha})" if self.channel == "exp" else self.channel

    @property
    def csir_label(self) -> str:
        return self.csir


def validate_spec(spec: ExperimentSpec) -> None:
    if spec.m < 1 or spec.k < 1:
        raise ConfigurationError("m and k must be >= 1")
    if spec.trials < 1:
        raise ConfigurationError("trials must be >= 1")
    if len(spec.snr_db_grid) == 0:
        raise ConfigurationError("snr grid must be non-empty")
    if spec.max_iters < 1:
        raise ConfigurationError("max_iters must be >= 1")
    for name in spec.detectors:
        if name not in DETECTOR_NAMES:
            raise ConfigurationError(
                f"unknown detector '{name}'; known: {', '.join(DETECTOR_NAMES)}"
            )
    if len(set(spec.detectors)) != len(spec.detectors):
        raise ConfigurationError("duplicate detector names")
    if spec.channel not in ("iid", "exp"):
        raise ConfigurationError(f"unknown channel model '{spec.channel}'")
    if spec.channel == "exp":
        if spec.alpha is None:
            raise ConfigurationError("exp channel requires alpha")
        if abs(complex(spec.alpha)) >= 1:
            raise ConfigurationError("|alpha| must be < 1")
    if spec.csir not in ("perfect", "pilot"):
        raise ConfigurationError(f"unknown csir mode '{spec.csir}'")
    if spec.csir == "pilot":
        tp = spec.k if spec.pilot_len is None else spec.pilot_len
        if tp < spec.k:
            raise ConfigurationError("pilot_len must be >= k")
        if spec.pilot_power <= 0:
            raise ConfigurationError("pilot_power must be positive")
    if "mf-vb-m" in spec.detectors and spec.csir != "pilot":
        raise ConfigurationError("mf-vb-m requires pilot CSIR")
    constellation_from_label(spec.modulation)  # raises on bad labels


@dataclass
class SweepRecord:
    """One aggregated (detector, SNR) cell of a sweep."""

    detector: str
    m: int
    k: int
    mod: str
    channel: str
    csir: str
    snr_db: float
    trials: int
    symbols_sent: int
    symbol_errors: int
    ser: float
    mean_iters: float
    wall_ms: float


@dataclass
class ConvergenceRecord:
    """SER after a given number of iterations, averaged over trials."""

    detector: str
    snr_db: float
    iteration: int
    ser: float


@dataclass
class SweepResult:
    records: list[SweepRecord]
    convergence: list[ConvergenceRecord] | None = None


class _Prepared:
    """Per-process immutable context derived from a spec."""

    def __init__(self, spec: ExperimentSpec):
        validate_spec(spec)
        self.spec = spec
        self.constellation = constellation_from_label(spec.modulation)
        self.n0 = [noise_var_for_snr(s, spec.m, spec.k) for s in spec.snr_db_grid]
        if spec.channel == "exp":
            R = exp_corr_covariance(spec.m, spec.alpha)
            self.R = [R] * spec.k
            self.factors = [covariance_factor(R)] * spec.k
        else:
            self.R = None
            self.factors = None
        if spec.csir == "pilot":
            tp = spec.k if spec.pilot_len is None else spec.pilot_len
            self.pilots = make_orthogonal_pilots(spec.k, tp, spec.pilot_power)
        else:
            self.pilots = None
        self.detectors = {}
        for name in spec.detectors:
            self.detectors[name] = make_detector(
                name, constellation=self.constellation,
                max_iters=spec.max_iters, early_stop_tol=spec.early_stop_tol,
                record_trace=spec.record_convergence,
            )


def _trial_rng(spec: ExperimentSpec, snr_index: int, trial_index: int):
    ss = np.random.SeedSequence(spec.base_seed, spawn_key=(snr_index, trial_index))
    return np.random.default_rng(ss)


def _draw_realization(prep: _Prepared, snr_index: int, rng):
    """Draw order is fixed: symbols, channel, data noise, pilot noise."""
    spec = prep.spec
    c = prep.constellation
    n0 = prep.n0[snr_index]
    x_idx = rng.integers(0, c.size, size=spec.k)
    x = c.points[x_idx]
    if spec.channel == "exp":
        scenario = gen_correlated_channel(prep.R, rng, factors=prep.factors)
    else:
        scenario = gen_iid_channel(spec.m, spec.k, rng)
    scenario.n0 = n0
    y = scenario.H @ x + np.sqrt(n0) * crandn(rng, spec.m)
    estimate = None
    if prep.pilots is not None:
        y_p = scenario.H @ prep.pilots + np.sqrt(n0) * crandn(rng, spec.m,
                                                              prep.pilots.shape[1])
        estimate = mmse_channel_estimate(y_p, prep.pilots, scenario.R, n0)
    return x_idx, scenario, y, estimate


def _detect_one(prep: _Prepared, name: str, scenario, y, estimate):
    det = prep.detectors[name]
    n0 = scenario.n0
    if name == "mf-vb-m":
        det.fit(estimate)
    else:
        H = estimate.h_hat if estimate is not None else scenario.H
        if det.requires_noise_var:
            det.fit(H, n0)
        else:
            det.fit(H)
    return det.detect(y)


def _per_iteration_errors(out, x_idx, c, max_iters: int) -> np.ndarray:
    """Symbol errors after each iteration, padded with the final value."""
    errs = np.empty(max_iters, dtype=np.int64)
    if not out.trace:  # one-shot detector or halted before the first sweep
        errs[:] = int(np.sum(out.hard_symbols != x_idx))
        return errs
    last = None
    for entry in out.trace:
        dec = map_slice_array(entry.z, entry.noise, c)
        last = int(np.sum(dec != x_idx))
        errs[entry.iteration - 1] = last
    done = out.trace[-1].iteration
    errs[done:] = last
    return errs


def run_trial(spec: ExperimentSpec, snr_db: float, trial_index: int,
              _prepared: _Prepared | None = None) -> dict[str, tuple[int, int]]:
    """Run all requested detectors on one shared realization.

    Returns {detector: (symbol_errors, iters_used)}. Deterministic in
    (spec.base_seed, snr index, trial_index).
    """
    prep = _prepared if _prepared is not None else _Prepared(spec)
    try:
        snr_index = spec.snr_db_grid.index(snr_db)
    except ValueError:
        raise ConfigurationError(f"snr_db={snr_db} is not on the spec grid") from None
    rng = _trial_rng(spec, snr_index, trial_index)
    x_idx, scenario, y, estimate = _draw_realization(prep, snr_index, rng)
    results = {}
    for name in spec.detectors:
        out = _detect_one(prep, name, scenario, y, estimate)
        errors = int(np.sum(out.hard_symbols != x_idx))
        results[name] = (errors, out.iters_used)
    return results


def _run_chunk(prep: _Prepared, snr_index: int, start: int, stop: int):
    spec = prep.spec
    d = len(spec.detectors)
    errors = np.zeros(d, dtype=np.int64)
    iters = np.zeros(d, dtype=np.int64)
    wall = np.zeros(d)
    conv = (np.zeros((d, spec.max_iters), dtype=np.int64)
            if spec.record_convergence else None)
    for t in range(start, stop):
        rng = _trial_rng(spec, snr_index, t)
        x_idx, scenario, y, estimate = _draw_realization(prep, snr_index, rng)
        for j, name in enumerate(spec.detectors):
            t0 = time.perf_counter()
            out = _detect_one(prep, name, scenario, y, estimate)
            wall[j] += time.perf_counter() - t0
            errors[j] += int(np.sum(out.hard_symbols != x_idx))
            iters[j] += out.iters_used
            if conv is not None:
                conv[j] += _per_iteration_errors(out, x_idx, prep.constellation,
                                                 spec.max_iters)
    return snr_index, stop - start, errors, iters, wall, conv


_WORKER_PREP: _Prepared | None = None


def _worker_init(spec: ExperimentSpec):
    global _WORKER_PREP
    _WORKER_PREP = _Prepared(spec)


def _worker_task(args):
    snr_index, start, stop = args
    return _run_chunk(_WORKER_PREP, snr_index, start, stop)


def worker_count() -> int:
    env = os.environ.get("VBMIMO_WORKERS", "")
    if env.strip():
        try:
            n = int(env)
        except ValueError:
            raise ConfigurationError(
                f"VBMIMO_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigurationError("VBMIMO_WORKERS must be >= 1")
        return n
    return os.cpu_count() or 1


def run_sweep(spec: ExperimentSpec, workers: int | None = None) -> SweepResult:
    """Execute every (snr, trial) cell and aggregate per-detector records.

    Aggregation is a sum of per-chunk counters, so the result does not depend
    on chunking or scheduling order (wall_ms aside).
    """
    validate_spec(spec)
    if workers is None:
        workers = worker_count()
    n_snr = len(spec.snr_db_grid)
    d = len(spec.detectors)
    errors = np.zeros((n_snr, d), dtype=np.int64)
    iters = np.zeros((n_snr, d), dtype=np.int64)
    wall = np.zeros((n_snr, d))
    conv = (np.zeros((n_snr, d, spec.max_iters), dtype=np.int64)
            if spec.record_convergence else None)

    chunk = max(1, min(512, spec.trials // max(1, 4 * workers) or 1))
    tasks = [(s, lo, min(lo + chunk, spec.trials))
             for s in range(n_snr) for lo in range(0, spec.trials, chunk)]

    def absorb(result):
        snr_index, _, e, it, w, cv = result
        errors[snr_index] += e
        iters[snr_index] += it
        wall[snr_index] += w
        if conv is not None:
            conv[snr_index] += cv

    if workers == 1:
        prep = _Prepared(spec)
        for task in tasks:
            absorb(_run_chunk(prep, *task))
    else:
        import multiprocessing as mp

        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_worker_init, initargs=(spec,)) as pool:
            for result in pool.imap_unordered(_worker_task, tasks):
                absorb(result)

    symbols = spec.trials * spec.k
    records = []
    for s, snr_db in enumerate(spec.snr_db_grid):
        for j, name in enumerate(spec.detectors):
            records.append(SweepRecord(
                detector=name, m=spec.m, k=spec.k, mod=spec.modulation,
                channel=spec.channel_label, csir=spec.csir_label,
                snr_db=float(snr_db), trials=spec.trials,
                symbols_sent=symbols, symbol_errors=int(errors[s, j]),
                ser=errors[s, j] / symbols,
                mean_iters=iters[s, j] / spec.trials,
                wall_ms=float(wall[s, j]) * 1e3,
            ))
    convergence = None
    if conv is not None:
        convergence = [
            ConvergenceRecord(detector=name, snr_db=float(snr_db),
                              iteration=i + 1, ser=conv[s, j, i] / symbols)
            for s, snr_db in enumerate(spec.snr_db_grid)
            for j, name in enumerate(spec.detectors)
            for i in range(spec.max_iters)
        ]
    return SweepResult(records=records, convergence=convergence)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_records(fh, records: list[SweepRecord]) -> None:
    """Stream sweep records to an open text file, newline-terminated."""
    fh.write(",".join(CSV_COLUMNS) + "\n")
    for r in records:
        row = (r.detector, r.m, r.k, r.mod, r.channel, r.csir,
               r.snr_db, r.trials, r.symbols_sent, r.symbol_errors,
               r.ser, r.mean_iters, r.wall_ms)
        fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_csv(records: list[SweepRecord], path) -> None:
    """Write sweep records with the fixed column order, newline-terminated."""
    try:
        with open(path, "w", newline="") as fh:
            write_records(fh, records)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_csv(path) -> list[SweepRecord]:
    """Parse a results file written by ``write_csv``."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header in {path}")
        for row in reader:
            records.append(SweepRecord(
                detector=row["detector"], m=int(row["M"]), k=int(row["K"]),
                mod=row["mod"], channel=row["channel"], csir=row["csir"],
                snr_db=float(row["snr_db"]), trials=int(row["trials"]),
                symbols_sent=int(row["symbols_sent"]),
                symbol_errors=int(row["symbol_errors"]), ser=float(row["ser"]),
                mean_iters=float(row["mean_iters"]),
                wall_ms=float(row["wall_ms"]),
            ))
    return records


def write_convergence_csv(records: list[ConvergenceRecord], path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(CONVERGENCE_CSV_COLUMNS) + "\n")
            for r in records:
                fh.write(",".join(_fmt(v) for v in
                                  (r.detector, r.snr_db, r.iteration, r.ser)) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc
