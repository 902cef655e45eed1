"""
Tabular Bigram Estimators

Closed-form scratch (maximum likelihood) and distilled estimators of a bigram
transition matrix, plus the Monte-Carlo machinery that checks their sample
complexity: coupon-collector simulation, MLE L1 error trials and the
estimator sweep.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from ..core.errors import InvariantViolation
from .markov_gen import (
    RowCounts,
    SequenceDataset,
    TransitionMatrix,
    build_sparse_matrix,
    empirical_row_counts,
    sample_pairs,
)

logger = logging.getLogger(__name__)

FALLBACK_UNIFORM = "uniform"

SCRATCH = "scratch"
DISTILL = "distill"


@dataclass(frozen=True)
class ScratchEstimate:
    """Maximum-likelihood estimate with the counts it came from"""
    matrix: TransitionMatrix
    counts: RowCounts
    unseen_rows: FrozenSet[int]


@dataclass(frozen=True)
class DistillEstimate:
    """Estimate that copies teacher rows for every observed current token"""
    matrix: TransitionMatrix
    observed_rows: FrozenSet[int]
    teacher: TransitionMatrix


def _fallback_row(k: int, policy: str) -> np.ndarray:
    if policy != FALLBACK_UNIFORM:
        raise InvariantViolation(f"Unknown fallback policy '{policy}'")
    return np.full(k, 1.0 / k)


def fit_scratch(counts: RowCounts, fallback: str = FALLBACK_UNIFORM) -> ScratchEstimate:
    """Empirical frequencies n_ij / n_i; rows with n_i = 0 get the fallback"""
    k = counts.k
    if counts.counts.shape != (k, k):
        raise InvariantViolation(f"Counts must be square, got {counts.counts.shape}")

    rows = np.empty((k, k))
    seen = counts.totals > 0
    rows[seen] = counts.counts[seen] / counts.totals[seen, None]
    rows[~seen] = _fallback_row(k, fallback)

    unseen = frozenset(int(i) for i in np.flatnonzero(~seen))
    return ScratchEstimate(matrix=TransitionMatrix.from_rows(rows), counts=counts, unseen_rows=unseen)


def _observed_tokens(source: Union[SequenceDataset, RowCounts]) -> np.ndarray:
    if isinstance(source, RowCounts):
        return np.flatnonzero(source.totals > 0)
    if source.n == 0:
        return np.array([], dtype=np.int64)
    return np.unique(source.sequences[:, :-1])


def fit_distill(
    source: Union[SequenceDataset, RowCounts],
    teacher: TransitionMatrix,
    fallback: str = FALLBACK_UNIFORM,
) -> DistillEstimate:
    """Copy the teacher's row for every token seen as a current token"""
    k = source.k
    if k != teacher.k:
        raise InvariantViolation(f"Vocabulary mismatch: data k={k}, teacher k={teacher.k}")

    observed = _observed_tokens(source)
    rows = np.tile(_fallback_row(k, fallback), (k, 1))
    rows[observed] = teacher.rows[observed]
    return DistillEstimate(
        matrix=TransitionMatrix.from_rows(rows, teacher.thresholds),
        observed_rows=frozenset(int(i) for i in observed),
        teacher=teacher,
    )


def expected_coupon_draws(k: int) -> float:
    """k · H_k, the mean number of draws to collect all k coupons"""
    return k * math.fsum(1.0 / i for i in range(1, k + 1))


def coupon_tail_threshold(k: int, delta: float) -> float:
    """k log k + k log(1/δ): exceeded with probability below δ"""
    return k * math.log(k) + k * math.log(1.0 / delta)


def generalized_coupon_threshold(k: int, m: int, delta: float) -> float:
    """(k log k + (m − 1) k log log k) / δ for collecting m copies of each coupon"""
    log_log_k = math.log(max(math.log(k), 1.0)) if k > 1 else 0.0
    return (k * math.log(max(k, 1)) + (m - 1) * k * log_log_k) / delta


def coupon_trial(k: int, m: int, seed: Union[int, Sequence[int]]) -> int:
    """Draw coupons uniformly until every one of k has m copies; return the draw count"""
    if k < 1 or m < 1:
        raise InvariantViolation(f"coupon_trial needs k >= 1 and m >= 1, got k={k}, m={m}")
    rng = np.random.default_rng(seed)
    chunk = max(64, 2 * k * m)
    draws = np.empty(0, dtype=np.int64)

    while True:
        draws = np.concatenate([draws, rng.integers(0, k, size=chunk)])
        counts = np.bincount(draws, minlength=k)
        if counts.min() >= m:
            break
        chunk *= 2

    # position of each coupon's m-th copy
    order = np.argsort(draws, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return int(order[starts + m - 1].max()) + 1


def coupon_trials(k: int, m: int, trials: int, seed: int) -> np.ndarray:
    """Draw counts of `trials` independent coupon trials keyed by (seed, trial)"""
    return np.array([coupon_trial(k, m, [seed, t]) for t in range(trials)], dtype=np.int64)


@dataclass(frozen=True)
class CouponTailCheck:
    """Empirical exceedance of a coupon-collector tail threshold"""
    k: int
    m: int
    delta: float
    threshold: float
    trials: int
    exceedances: int
    allowed: int

    @property
    def exceedance_rate(self) -> float:
        return self.exceedances / self.trials

    @property
    def holds(self) -> bool:
        return self.exceedances <= self.allowed


def coupon_exceedance(k: int, delta: float, trials: int, seed: int, m: int = 1, confidence: float = 0.99) -> CouponTailCheck:
    """Count trials exceeding the tail threshold; `allowed` is the binomial upper quantile at δ"""
    threshold = coupon_tail_threshold(k, delta) if m == 1 else generalized_coupon_threshold(k, m, delta)
    draws = coupon_trials(k, m, trials, seed)
    return CouponTailCheck(
        k=k,
        m=m,
        delta=delta,
        threshold=threshold,
        trials=trials,
        exceedances=int(np.count_nonzero(draws > threshold)),
        allowed=int(stats.binom.ppf(confidence, trials, delta)),
    )


@dataclass(frozen=True)
class L1Trials:
    """Trial mean and standard error of ||π̂_i − π_i||₁ at a fixed row count"""
    n_i: int
    support: int
    mean: float
    stderr: float
    trials: int

    @property
    def bound(self) -> float:
        return math.sqrt(self.support / self.n_i)


def mle_l1_trials(row: np.ndarray, n_i: int, trials: int, seed: int) -> L1Trials:
    """Monte-Carlo L1 error of the empirical row from n_i multinomial draws"""
    if n_i < 1:
        raise InvariantViolation(f"n_i must be >= 1, got {n_i}")
    row = np.asarray(row, dtype=np.float64)
    rng = np.random.default_rng(seed)
    estimates = rng.multinomial(n_i, row, size=trials) / n_i
    errors = np.abs(estimates - row).sum(axis=1)
    stderr = float(errors.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return L1Trials(
        n_i=n_i,
        support=int(np.count_nonzero(row)),
        mean=float(errors.mean()),
        stderr=stderr,
        trials=trials,
    )


def scratch_sample_requirement(k: int, p: int, epsilon: float, delta: float) -> float:
    """Pairs needed so every row is seen ⌈p/ε²⌉ times with probability 1 − δ"""
    m = math.ceil(p / epsilon ** 2)
    return generalized_coupon_threshold(k, m, delta)


def distill_sample_requirement(k: int, delta: float) -> float:
    """Pairs needed so every row is seen once with probability 1 − δ"""
    return coupon_tail_threshold(k, delta)


@dataclass
class ComplexityTrial:
    """One estimator fit at one grid point"""
    k: int
    p: int
    epsilon: float
    delta: float
    samples_used: int
    estimator: str
    trial: int
    achieved_error: np.ndarray = field(repr=False)

    @property
    def success(self) -> bool:
        return bool(np.all(self.achieved_error <= self.epsilon))

    @property
    def mean_l1(self) -> float:
        return float(self.achieved_error.mean())

    def to_record(self) -> Dict[str, object]:
        return {
            "k": self.k,
            "p": self.p,
            "epsilon": self.epsilon,
            "n_samples": self.samples_used,
            "estimator": self.estimator,
            "trial": self.trial,
            "mean_L1": self.mean_l1,
            "success": self.success,
        }


def run_complexity_sweep(
    k: int,
    p: int,
    epsilon: float,
    delta: float,
    sample_grid: Sequence[int],
    trials: int = 20,
    seed: int = 0,
    matrix: Optional[TransitionMatrix] = None,
) -> List[ComplexityTrial]:
    """
    Fit both estimators on fresh length-2 samples at each grid size.

    The teacher is a p-sparse matrix (or `matrix` when given). Trial t at grid
    size n samples from the stream keyed by (seed, n, t).
    """
    if not sample_grid:
        raise InvariantViolation("sample_grid must not be empty")
    if not 0.0 < epsilon <= 1.0:
        raise InvariantViolation(f"epsilon must lie in (0, 1], got {epsilon}")
    if trials < 1:
        raise InvariantViolation(f"trials must be >= 1, got {trials}")

    teacher = matrix if matrix is not None else build_sparse_matrix(k, p, seed)
    records: List[ComplexityTrial] = []
    for n in sorted(sample_grid):
        for t in range(trials):
            counts = empirical_row_counts(sample_pairs(teacher, n, [seed, n, t]))
            estimates = {
                SCRATCH: fit_scratch(counts).matrix,
                DISTILL: fit_distill(counts, teacher).matrix,
            }
            for name, estimate in estimates.items():
                records.append(
                    ComplexityTrial(
                        k=teacher.k,
                        p=p,
                        epsilon=epsilon,
                        delta=delta,
                        samples_used=n,
                        estimator=name,
                        trial=t,
                        achieved_error=np.abs(estimate.rows - teacher.rows).sum(axis=1),
                    )
                )

    logger.info(f"Complexity sweep k={k} p={p} eps={epsilon}: {len(records)} trial records")
    return records


@dataclass(frozen=True)
class SweepPoint:
    """Trial-averaged result for one (grid size, estimator)"""
    n_samples: int
    estimator: str
    worst_row_mean_l1: float
    worst_row_stderr: float
    success: bool


@dataclass
class SweepSummary:
    """Expectation-level sweep results and each estimator's first ε-accurate grid size"""
    points: List[SweepPoint]
    crossover: Dict[str, Optional[int]]


def summarize_sweep(trials: List[ComplexityTrial]) -> SweepSummary:
    """Average per-row errors over trials and find the crossover profile"""
    if not trials:
        raise InvariantViolation("Cannot summarize an empty sweep")
    groups: Dict[tuple, List[ComplexityTrial]] = {}
    for trial in trials:
        groups.setdefault((trial.samples_used, trial.estimator), []).append(trial)

    points: List[SweepPoint] = []
    crossover: Dict[str, Optional[int]] = {}
    for (n, estimator), group in sorted(groups.items()):
        errors = np.stack([t.achieved_error for t in group])
        row_means = errors.mean(axis=0)
        worst = int(np.argmax(row_means))
        stderr = float(errors[:, worst].std(ddof=1) / math.sqrt(len(group))) if len(group) > 1 else 0.0
        success = bool(np.all(row_means <= group[0].epsilon))
        points.append(SweepPoint(n, estimator, float(row_means[worst]), stderr, success))
        crossover.setdefault(estimator, None)
        if success and crossover[estimator] is None:
            crossover[estimator] = n

    return SweepSummary(points=points, crossover=crossover)
