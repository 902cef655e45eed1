"""
pass@k analysis

Closed-form pass@k of a binary policy, the pass@k-optimal policy, the
three-classifier example (Bayes-optimal vs diverse-with-coverage vs
diverse-without-coverage), the unbiased combinatorial estimator and sampled
scoring of sandbox models on verifiable items.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Union

import numpy as np
from scipy.special import expit, gammaln, logit, softmax

from ..core.errors import InvariantViolation
from .eval_suite import Predictor, trigger_positions
from .markov_gen import EntropyClass, SequenceDataset, TransitionMatrix

logger = logging.getLogger(__name__)

POLICY_TOLERANCE = 1e-12
EXACT_ESTIMATOR_LIMIT = 256


class Provenance(str, Enum):
    ANALYTIC = "analytic"
    ESTIMATED = "estimated"


@dataclass(frozen=True)
class BinaryTask:
    """True probability p of class 1"""
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvariantViolation(f"p must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class Policy:
    """Probabilities assigned to class 1 (alpha) and class 0 (beta)"""
    alpha: float
    beta: Optional[float] = None
    at_limit: bool = False

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 - self.alpha)
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise InvariantViolation(f"Policy probabilities must lie in [0, 1]: ({self.alpha}, {self.beta})")
        if abs(self.alpha + self.beta - 1.0) > POLICY_TOLERANCE:
            raise InvariantViolation(f"alpha + beta must equal 1, got {self.alpha + self.beta}")


@dataclass
class PassKCurve:
    """k → pass@k with provenance"""
    entries: Dict[int, float]
    provenance: Provenance
    label: str = ""
    n: Optional[int] = None
    correct: List[int] = field(default_factory=list)
    temperature: Optional[float] = None

    def __post_init__(self):
        for k, value in self.entries.items():
            if not 0.0 <= value <= 1.0:
                raise InvariantViolation(f"pass@{k}={value} outside [0, 1]")

    def __getitem__(self, k: int) -> float:
        return self.entries[k]

    @property
    def ks(self) -> List[int]:
        return sorted(self.entries)


def passk_value(task: BinaryTask, policy: Policy, k: int) -> float:
    """p · (1 − β^k) + (1 − p) · (1 − α^k)"""
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    return task.p * (1.0 - policy.beta ** k) + (1.0 - task.p) * (1.0 - policy.alpha ** k)


def multiclass_passk(true_probs: Sequence[float], policy_probs: Sequence[float], k: int) -> float:
    """Σ_y p(y) · (1 − (1 − q(y))^k) for independent draws from q"""
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    p = np.asarray(true_probs, dtype=np.float64)
    q = np.asarray(policy_probs, dtype=np.float64)
    return math.fsum(p * (1.0 - (1.0 - q) ** k))


def optimal_alpha(p: float, k: int) -> float:
    """
    pass@k-optimal probability of class 1.

    r^{1/(k−1)} / (1 + r^{1/(k−1)}) with r = p / (1 − p), i.e.
    expit(logit(p) / (k − 1)). k = 1 gives the Bayes rule [p > 1/2];
    p ∈ {0, 1} returns the boundary limit p.
    """
    BinaryTask(p)
    if k < 1:
        raise InvariantViolation(f"k must be >= 1, got {k}")
    if k == 1:
        return 1.0 if p > 0.5 else 0.0
    if p in (0.0, 1.0):
        return float(p)
    return float(expit(logit(p) / (k - 1)))


def optimal_policy(task: BinaryTask, k: int) -> Policy:
    """Optimal policy, flagged when it sits at a boundary limit"""
    alpha = optimal_alpha(task.p, k)
    return Policy(alpha=alpha, at_limit=k > 1 and task.p in (0.0, 1.0))


def analytic_curve(task: BinaryTask, policy: Policy, ks: Sequence[int], label: str = "") -> PassKCurve:
    return PassKCurve({k: passk_value(task, policy, k) for k in ks}, Provenance.ANALYTIC, label)


def analytic_curves(epsilon: float, ks: Sequence[int]) -> Dict[str, PassKCurve]:
    """
    Curves of the three classifiers on a three-option prompt with true
    probabilities (1/2 + ε, 1/2 − ε, 0):

    C1 puts all mass on option 0, C2 splits evenly over options 0 and 1,
    C3 splits evenly over options 0 and 2.
    """
    if not 0.0 < epsilon < 0.5:
        raise InvariantViolation(f"epsilon must lie in (0, 1/2), got {epsilon}")
    truth = (0.5 + epsilon, 0.5 - epsilon, 0.0)
    classifiers = {
        "C1": (1.0, 0.0, 0.0),
        "C2": (0.5, 0.5, 0.0),
        "C3": (0.5, 0.0, 0.5),
    }
    return {
        name: PassKCurve({k: multiclass_passk(truth, q, k) for k in ks}, Provenance.ANALYTIC, name)
        for name, q in classifiers.items()
    }


@dataclass
class Crossover:
    """Smallest k where the diverse classifier beats the Bayes-optimal one"""
    k: int
    epsilon: float
    curves: Dict[str, PassKCurve]


def crossover_point(epsilon: float, ks: Sequence[int] = (1, 2, 4, 8, 16, 32)) -> Crossover:
    """Smallest integer k with 1 − (1/2)^k > 1/2 + ε"""
    if not 0.0 < epsilon < 0.5:
        raise InvariantViolation(f"epsilon must lie in (0, 1/2), got {epsilon}")
    k = 1
    while 1.0 - 0.5 ** k <= 0.5 + epsilon:
        k += 1
    return Crossover(k=k, epsilon=epsilon, curves=analytic_curves(epsilon, ks))


def estimate_passk(n: int, c: int, k: int) -> float:
    """
    Unbiased pass@k from c correct out of n samples: 1 − C(n−c, k) / C(n, k).

    Exact rational arithmetic up to EXACT_ESTIMATOR_LIMIT samples, log-space
    binomials beyond.
    """
    if not 0 <= c <= n:
        raise InvariantViolation(f"Need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise InvariantViolation(f"Need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return 1.0
    if n <= EXACT_ESTIMATOR_LIMIT:
        return float(1 - Fraction(math.comb(n - c, k), math.comb(n, k)))
    log_ratio = (
        gammaln(n - c + 1) - gammaln(n - c - k + 1)
        - gammaln(n + 1) + gammaln(n - k + 1)
    )
    return float(-np.expm1(log_ratio))


@dataclass(frozen=True)
class PassKItem:
    """One verifiable prediction: the token after `position` in a sequence"""
    sequence_index: int
    position: int
    correct: FrozenSet[int]
    kind: str


@dataclass
class PassKTask:
    """Items over a shared array of sequences"""
    sequences: np.ndarray
    items: List[PassKItem]

    def of_kind(self, kind: str) -> "PassKTask":
        return PassKTask(self.sequences, [item for item in self.items if item.kind == kind])


TRIGGER_COPY = "trigger-copy"


def build_passk_items(
    eval_set: SequenceDataset,
    matrix: TransitionMatrix,
    max_items: int = 512,
    seed: int = 0,
    row_classes: Sequence[EntropyClass] = (EntropyClass.MEDIUM, EntropyClass.HIGH),
) -> PassKTask:
    """
    Trigger-copy items at repeat trigger occurrences (one correct token) and
    row items at positions whose current token has a medium- or high-entropy
    row (any token in the row's support counts).
    """
    rng = np.random.default_rng(seed)
    is_trigger, first, targets = trigger_positions(eval_set)
    current = eval_set.sequences[:, :-1]
    items: List[PassKItem] = []

    def pick(mask: np.ndarray) -> List[tuple]:
        seq_idx, pos_idx = np.nonzero(mask)
        chosen = np.sort(rng.permutation(len(seq_idx))[:max_items])
        return [(int(seq_idx[i]), int(pos_idx[i])) for i in chosen]

    for s, j in pick(is_trigger & ~first):
        items.append(PassKItem(s, j, frozenset({int(targets[s, j])}), TRIGGER_COPY))

    supports = [frozenset(int(t) for t in np.flatnonzero(row)) for row in matrix.rows]
    trigger_mask = eval_set.triggers.mask(matrix.k)
    for cls in row_classes:
        tokens = [i for i in matrix.rows_in_class(cls) if not trigger_mask[i]]
        for s, j in pick(np.isin(current, tokens)):
            items.append(PassKItem(s, j, supports[current[s, j]], f"{cls.value}-row"))

    return PassKTask(eval_set.sequences, items)


def _item_distributions(model: Predictor, task: PassKTask, temperature: float) -> np.ndarray:
    seq_ids = sorted({item.sequence_index for item in task.items})
    lookup = {s: i for i, s in enumerate(seq_ids)}
    log_probs = model.log_probs(task.sequences[seq_ids])
    rows = np.stack([log_probs[lookup[item.sequence_index], item.position] for item in task.items])
    if temperature == 0:
        out = np.zeros_like(rows)
        out[np.arange(len(rows)), rows.argmax(axis=-1)] = 1.0
        return out
    return softmax(rows / temperature, axis=-1)


def sample_and_score(
    model: Predictor,
    task: PassKTask,
    ks: Union[int, Sequence[int]],
    n: int,
    temperature: float,
    seed: int,
) -> PassKCurve:
    """
    Draw n completions per item at `temperature` (0 means greedy), count
    correct draws and average the unbiased pass@k over items.
    """
    ks = [ks] if isinstance(ks, int) else list(ks)
    if any(k > n for k in ks):
        raise InvariantViolation(f"Every k must be <= n={n}, got {ks}")
    if temperature < 0:
        raise InvariantViolation(f"temperature must be >= 0, got {temperature}")
    if not task.items:
        raise InvariantViolation("No pass@k items to score")

    probs = _item_distributions(model, task, temperature)
    cdf = np.cumsum(probs, axis=-1)
    last = probs.shape[-1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=-1)
    correct: List[int] = []
    for i, item in enumerate(task.items):
        u = np.random.default_rng([seed, i]).random(n)
        draws = np.minimum((cdf[i][None, :] <= u[:, None]).sum(axis=1), last[i])
        correct.append(int(np.isin(draws, list(item.correct)).sum()))

    entries = {k: math.fsum(estimate_passk(n, c, k) for c in correct) / len(correct) for k in ks}
    return PassKCurve(entries, Provenance.ESTIMATED, n=n, correct=correct, temperature=temperature)


def temperature_grid(stop: float = 1.5, step: float = 0.1) -> List[float]:
    """0, step, ..., stop with values rounded to avoid float drift"""
    count = int(round(stop / step))
    return [round(i * step, 10) for i in range(count + 1)]


@dataclass(frozen=True)
class FrontierPoint:
    temperature: float
    seed: int
    pass_at_1: float
    pass_at_n: float
    n: int


def temperature_frontier(
    model: Predictor,
    task: PassKTask,
    temperatures: Sequence[float],
    seed: int,
    n: int = 16,
) -> List[FrontierPoint]:
    """pass@1 against pass@n for each temperature"""
    points = []
    for temperature in temperatures:
        curve = sample_and_score(model, task, [1, n], n, temperature, seed)
        points.append(FrontierPoint(temperature, seed, curve[1], curve[n], n))
    return points
