"""Estimators and Monte Carlo oracles that confront simulation traces with
the closed forms in `analytic`.

Every comparison lands in a ComparisonReport carrying the analytic value,
the empirical value, the sample size, a binomial/normal standard error and
the resulting z-score.  Comparisons whose expected event count is below 10
are flagged as under-powered instead of being treated as pass/fail
evidence.  All estimators are pure over immutable traces.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .analytic import (
    bernoulli_entropy,
    catchup_probability,
    discovery_cdf,
    entropy_peak_time,
    fork_probability,
    infer_hashrate,
    interval_tail_probability,
    theta_from_difficulty,
)
from .sim import SimTrace

UNDERPOWERED_EVENTS = 10

# Asymptotic one-sample Kolmogorov-Smirnov critical value at alpha ~= 0.01;
# honest only for large n, hence the n >= 100 floor on the diagnostic.
KS_CRITICAL_COEFF = 1.63


@dataclass
class ComparisonReport:
    quantity: str
    analytic: float
    empirical: float
    n: int
    stderr: float
    z: float
    warning: Optional[str] = None

    def row(self) -> list:
        return [self.quantity, repr(self.analytic), repr(self.empirical),
                self.n, repr(self.stderr), repr(self.z)]

    def __str__(self) -> str:
        s = (f"{self.quantity}: analytic={self.analytic:.6g} "
             f"empirical={self.empirical:.6g} n={self.n} "
             f"stderr={self.stderr:.3g} z={self.z:+.2f}")
        if self.warning:
            s += f"  [{self.warning}]"
        return s


def _binomial_report(quantity: str, analytic: float, empirical: float, n: int,
                     warning: Optional[str] = None) -> ComparisonReport:
    stderr = math.sqrt(analytic * (1.0 - analytic) / n) if n > 0 else 0.0
    if stderr > 0:
        z = (empirical - analytic) / stderr
    else:
        z = 0.0 if empirical == analytic else math.inf
    expected = analytic * n
    if warning is None and expected < UNDERPOWERED_EVENTS:
        warning = f"under-powered: expected events {expected:.2f} < {UNDERPOWERED_EVENTS}"
    return ComparisonReport(quantity, analytic, empirical, n, stderr, z, warning)


def _as_deltas(sample: Sequence[float]) -> np.ndarray:
    deltas = np.asarray(sample, dtype=float)
    if deltas.ndim != 1 or deltas.size == 0:
        raise ValueError("sample must be a nonempty 1-d sequence of intervals")
    if np.any(deltas <= 0):
        raise ValueError("intervals must be positive")
    return deltas


def estimate_lambda(sample: Sequence[float]) -> float:
    """Maximum-likelihood arrival rate for exponential intervals: n / sum."""
    deltas = _as_deltas(sample)
    if deltas.size < 2:
        raise ValueError("need at least 2 intervals to estimate a rate")
    return deltas.size / float(deltas.sum())


def hashrate_inference_windows(trace: SimTrace, window: int) -> list[float]:
    """Inferred aggregate hash rate over disjoint windows of `window`
    canonical blocks each (rate MLE fed through the difficulty relation)."""
    if window < 2:
        raise ValueError("window must cover at least 2 blocks")
    deltas = trace.canonical_deltas()
    if deltas.size < window:
        raise ValueError(f"canonical chain too short for window={window}")
    path = trace.canonical_path()
    out = []
    for i in range(deltas.size // window):
        chunk = deltas[i * window:(i + 1) * window]
        diffs = [trace.blocks[b].difficulty for b in path[i * window + 1:(i + 1) * window + 1]]
        out.append(infer_hashrate(estimate_lambda(chunk), float(np.mean(diffs))))
    return out


def fork_rate(trace: SimTrace) -> ComparisonReport:
    """Observed fork episodes per canonical block against the two-or-more
    discoveries-per-window form evaluated at the configured arrival rate
    and the largest pairwise delay."""
    n = trace.canonical_height()
    if n < 1:
        raise ValueError("trace has no canonical blocks")
    cfg = trace.config
    lam = cfg.nominal_hashrate * theta_from_difficulty(cfg.initial_difficulty)
    tau = cfg.delay.max_delay()
    analytic = fork_probability(lam, tau) if tau > 0 else 0.0
    warning = None
    if cfg.delay.kind == "per_pair":
        warning = "heterogeneous delays: analytic value is a bound at the max pairwise delay"
    empirical = len(trace.fork_episodes) / n
    return _binomial_report("fork_rate", analytic, empirical, n, warning)


def multi_discovery_window_rate(trace: SimTrace, tau: Optional[float] = None) -> ComparisonReport:
    """Fraction of consecutive propagation windows holding two or more
    discoveries (stale blocks included), against the same closed form.

    This measures exactly what the closed form states: the chance that a
    window of length tau contains >= 2 arrivals of the full discovery
    process.  Compare with fork_rate, which normalizes episodes per block.
    """
    cfg = trace.config
    if tau is None:
        tau = cfg.delay.max_delay()
    if tau <= 0:
        raise ValueError("tau must be positive")
    lam = cfg.nominal_hashrate * theta_from_difficulty(cfg.initial_difficulty)
    times = np.array([b.found_at for b in trace.blocks[1:]])
    nwin = int(times.max() // tau) if times.size else 0
    if nwin < 1:
        raise ValueError("trace too short to tile even one window")
    counts = np.bincount((times[times < nwin * tau] // tau).astype(int), minlength=nwin)
    empirical = float(np.mean(counts >= 2))
    return _binomial_report("multi_discovery_window_rate", fork_probability(lam, tau),
                            empirical, nwin)


def tail_frequency(sample: Sequence[float], threshold: float) -> ComparisonReport:
    """Observed exceedance fraction of intervals beyond `threshold` against
    the exponential survival function at the estimated rate."""
    deltas = _as_deltas(sample)
    lam_hat = estimate_lambda(deltas)
    analytic = interval_tail_probability(lam_hat, threshold)
    empirical = float(np.mean(deltas > threshold))
    return _binomial_report("tail_frequency", analytic, empirical, int(deltas.size))


@dataclass
class ExponentialityResult:
    n: int
    statistic: float       # one-sample KS distance against Exp(lambda-hat)
    critical: float        # 1.63 / sqrt(n)
    passed: bool
    lag1_autocorr: float
    lag1_bound: float      # 3 / sqrt(n) null band

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"exponentiality: KS={self.statistic:.5f} (crit {self.critical:.5f}) "
                f"{verdict}; lag1={self.lag1_autocorr:+.5f} (null band {self.lag1_bound:.5f})")


def exponentiality_diagnostic(sample: Sequence[float]) -> ExponentialityResult:
    """Kolmogorov-Smirnov goodness of fit of intervals to the exponential
    distribution at the MLE rate, plus the lag-1 autocorrelation."""
    deltas = _as_deltas(sample)
    n = int(deltas.size)
    if n < 100:
        raise ValueError("diagnostic needs at least 100 intervals")
    lam_hat = estimate_lambda(deltas)
    cdf = -np.expm1(-lam_hat * np.sort(deltas))
    i = np.arange(1, n + 1)
    ks = float(max((i / n - cdf).max(), (cdf - (i - 1) / n).max()))
    critical = KS_CRITICAL_COEFF / math.sqrt(n)
    centered = deltas - deltas.mean()
    denom = float((centered ** 2).sum())
    lag1 = float((centered[:-1] * centered[1:]).sum() / denom) if denom > 0 else 0.0
    return ExponentialityResult(
        n=n,
        statistic=ks,
        critical=critical,
        passed=ks < critical,
        lag1_autocorr=lag1,
        lag1_bound=3.0 / math.sqrt(n),
    )


def entropy_trajectory(lam: float, grid_step: float, horizon: float) -> list[tuple[float, float, float]]:
    """Sampled (t, p(t), entropy bits) curve on a regular grid.

    The exact peak instant ln(2)/lam is spliced into the grid when it falls
    inside the horizon, so the returned curve always contains its 1.0-bit
    maximum.
    """
    if grid_step <= 0 or horizon <= 0:
        raise ValueError("grid_step and horizon must be positive")
    ts = [i * grid_step for i in range(int(horizon / grid_step) + 1)]
    peak = entropy_peak_time(lam)
    if peak <= horizon and peak not in ts:
        ts.append(peak)
        ts.sort()
    out = []
    for t in ts:
        p = discovery_cdf(lam, t)
        out.append((t, p, bernoulli_entropy(p)))
    return out


def default_step_cap(q: float, k: int) -> int:
    """Step budget keeping the truncation bias of the race walk far below
    the binomial noise of a million-trial estimate.

    The still-alive success mass at step C shrinks like (q/p)^(drift*C)
    with drift 1-2q, so beyond C ~ 12 / ((1-2q) * ln(p/q)) it is
    negligible; near-critical q (0.45) needs ~600 steps even for k = 1,
    well above the 10k/(1-2q) floor.
    """
    if k == 0:
        return 1
    if q <= 0.0:
        return max(100, 10 * k)
    if q < 0.5:
        drift = 1.0 - 2.0 * q
        settle = 12.0 / (drift * math.log((1.0 - q) / q))
        return max(100, math.ceil(10.0 * k / drift), math.ceil(settle))
    return max(10_000, 100 * k)


_BATCH = 1 << 16
_SLAB = 64


def race_monte_carlo(q: float, k: int, trials: int, seed: int,
                     step_cap: Optional[int] = None) -> float:
    """Brute-force the catch-up race: a deficit starts at k and steps -1
    with probability q (attacker block) or +1 with probability 1-q, until
    it hits 0 (success) or the step budget runs out (failure).

    Runs in batches whose RNG streams derive deterministically from
    (seed, batch index), so results are reproducible bit for bit and
    independent of any execution schedule.  Within a batch the walks
    advance in slabs of 64 steps at a time: a walk succeeded in a slab iff
    the running minimum of its partial sums erased the deficit, and a walk
    whose deficit exceeds its remaining step budget at a slab boundary is
    failed early, which cannot change any outcome.
    """
    if not 0 <= q < 1:
        raise ValueError("q must lie in [0, 1)")
    if k < 0 or int(k) != k:
        raise ValueError("k must be a nonnegative integer")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if step_cap is None:
        step_cap = default_step_cap(q, k)
    if q < 0.5 and step_cap < 10.0 * k / (1.0 - 2.0 * q):
        raise ValueError("step_cap too small: truncation would bias the estimate")
    if k == 0:
        return 1.0
    if q == 0.0:
        return 0.0

    successes = 0
    done = 0
    batch_index = 0
    while done < trials:
        size = min(_BATCH, trials - done)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(batch_index,)))
        deficit = np.full(size, k, dtype=np.int32)
        steps_taken = 0
        while deficit.size and steps_taken < step_cap:
            span = min(_SLAB, step_cap - steps_taken)
            down = rng.random((deficit.size, span), dtype=np.float32) < q
            moves = 1 - 2 * down.astype(np.int8)
            # only walks within `span` of zero can possibly hit in this slab;
            # prefix sums stay within +-_SLAB so int8 holds them
            near = deficit <= span
            hit = np.zeros(deficit.size, dtype=bool)
            if near.all():
                lows = np.cumsum(moves, axis=1, dtype=np.int8).min(axis=1)
                hit = lows <= -deficit
                successes += int(hit.sum())
            elif near.any():
                lows = np.cumsum(moves[near], axis=1, dtype=np.int8).min(axis=1)
                hit[near] = lows <= -deficit[near]
                successes += int(hit.sum())
            deficit += moves.sum(axis=1, dtype=np.int32)
            steps_taken += span
            alive = ~hit & (deficit <= step_cap - steps_taken)
            if not alive.all():
                deficit = deficit[alive]
        done += size
        batch_index += 1
    return successes / trials


def reorg_depth_histogram(trace: SimTrace) -> dict[int, int]:
    """Tip-change counts keyed by reorg depth; plain extensions (depth 0)
    are excluded."""
    hist: dict[int, int] = {}
    for e in trace.tip_events:
        if e.reorg_depth >= 1:
            hist[e.reorg_depth] = hist.get(e.reorg_depth, 0) + 1
    return dict(sorted(hist.items()))


REPORT_CSV_FIELDS = ("quantity", "analytic", "empirical", "n", "stderr", "z")


def write_reports_csv(reports: Sequence[ComparisonReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_CSV_FIELDS)
        for r in reports:
            w.writerow(r.row())


def catchup_curve(q: float, k_max: int) -> list[tuple[int, float]]:
    """Closed-form catch-up probabilities for depths 0..k_max."""
    return [(k, catchup_probability(q, k)) for k in range(k_max + 1)]
