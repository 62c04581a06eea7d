"""Closed-form quantities of proof-of-work block timing.

Everything here is a pure function of its arguments. Units and conventions:

- hash rates are hashes per second, arrival rates are blocks per second,
  durations are seconds
- difficulty is dimensionless, expressed in multiples of the minimum
  difficulty (difficulty 1 corresponds to a per-hash success probability
  of about 2^-32)
- probabilities are plain floats in [0, 1], entropies are bits

Domain violations raise ValueError.
"""

import math

# Size of the hash output space: a hash attempt succeeds when the output,
# read as an integer, falls below the target threshold.
HASH_SPACE = 2**256

# Expected hashes per block at difficulty 1 (the approximation drops the
# 65535/65536 factor of the reference target).
DIFFICULTY_ONE_SCALE = 2**32

# Reference target corresponding to difficulty 1: (65535/65536) * 2^224.
MAX_TARGET = 65535 * 2**208


def theta_from_target(target: int) -> float:
    """Per-hash success probability for an explicit 256-bit target.

    Computed as an exact big-integer quotient, so there is no intermediate
    overflow and the result is correctly rounded (relative error well
    below 1e-12).
    """
    if not isinstance(target, int):
        raise ValueError("target must be an integer")
    if not 0 < target < HASH_SPACE:
        raise ValueError("target must lie strictly between 0 and 2^256")
    return target / HASH_SPACE


def theta_from_difficulty(difficulty: float) -> float:
    """Per-hash success probability 1 / (difficulty * 2^32)."""
    if difficulty <= 0:
        raise ValueError("difficulty must be positive")
    return 1.0 / (difficulty * DIFFICULTY_ONE_SCALE)


def arrival_rate(hashrate: float, theta: float) -> float:
    """Block arrival rate (blocks/second) of a hash rate against success
    probability theta.  Block discovery is Poisson with this rate."""
    if hashrate <= 0:
        raise ValueError("hashrate must be positive")
    if not 0 < theta < 1:
        raise ValueError("theta must lie strictly between 0 and 1")
    return hashrate * theta


def expected_trials(hashrate: float, duration: float) -> float:
    """Expected number of hash attempts in a time window."""
    if hashrate <= 0:
        raise ValueError("hashrate must be positive")
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    return hashrate * duration


def discovery_cdf(lam: float, t: float) -> float:
    """Probability that at least one block is found by time t.

    p(t) = 1 - exp(-lam * t), evaluated via expm1 so small lam*t keeps
    full precision.
    """
    if lam <= 0:
        raise ValueError("arrival rate must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return -math.expm1(-lam * t)


def bernoulli_entropy(p: float) -> float:
    """Entropy in bits of a binary event with success probability p.

    Uses the convention 0*log2(0) = 0, so the function is continuous on
    [0, 1] with value 0 at both endpoints and maximum 1 at p = 1/2.
    """
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    q = 1.0 - p
    return -(p * math.log2(p) + q * math.log2(q))


def entropy_peak_time(lam: float) -> float:
    """Time at which block-discovery entropy peaks: ln(2)/lam, the instant
    the discovery probability reaches one half."""
    if lam <= 0:
        raise ValueError("arrival rate must be positive")
    return math.log(2.0) / lam


def interval_tail_probability(lam: float, threshold: float) -> float:
    """Probability that a block interval exceeds `threshold` seconds.

    Survival function exp(-lam * threshold) of the exponential interval
    distribution.
    """
    if lam <= 0:
        raise ValueError("arrival rate must be positive")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    return math.exp(-lam * threshold)


def fork_probability(lam: float, tau: float) -> float:
    """Probability that two or more blocks are found within a window of
    length tau, i.e. P(N >= 2) for N ~ Poisson(lam * tau).

    Written as -expm1(-x) - x*exp(-x) so that tiny windows (x ~ 1e-3)
    retain at least six significant digits instead of cancelling.
    """
    if lam <= 0:
        raise ValueError("arrival rate must be positive")
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    x = lam * tau
    return -math.expm1(-x) - x * math.exp(-x)


def catchup_probability(q: float, k: int) -> float:
    """Probability that an attacker with hash-rate share q ever erases a
    deficit of k blocks against the honest majority p = 1 - q.

    Gambler's-ruin closed form (q/p)^k for q < p.  For q >= p the walk
    reaches 0 almost surely, so the function returns the limit value 1
    rather than rejecting the input.  k = 0 means no deficit: returns 1.
    """
    if not 0 <= q < 1:
        raise ValueError("q must lie in [0, 1)")
    if k < 0 or int(k) != k:
        raise ValueError("k must be a nonnegative integer")
    if k == 0:
        return 1.0
    p = 1.0 - q
    if q >= p:
        return 1.0
    return (q / p) ** k


def infer_hashrate(lam: float, difficulty: float) -> float:
    """Aggregate hash rate implied by an observed arrival rate at a known
    difficulty: H = lam * difficulty * 2^32."""
    if lam <= 0:
        raise ValueError("arrival rate must be positive")
    if difficulty <= 0:
        raise ValueError("difficulty must be positive")
    return lam * difficulty * DIFFICULTY_ONE_SCALE
