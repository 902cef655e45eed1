"""
Markov Sequence Generation

Builds entropy-stratified sparse bigram transition matrices, applies the
trigger-token modification and samples sequence datasets.

Convention: row = current token, column = next token, everywhere.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import InvariantViolation
from .archive import content_digest, read_archive, write_archive

logger = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-12

SeedLike = Union[int, Sequence[int]]


class EntropyClass(str, Enum):
    """Row entropy classes"""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class EntropyThresholds:
    """Class boundaries as fractions of log(k) nats"""
    low: float = 1.0 / 3.0
    high: float = 2.0 / 3.0

    def bounds(self, k: int) -> Tuple[float, float]:
        """Absolute (low, high) boundaries in nats for vocabulary size k"""
        return self.low * math.log(k), self.high * math.log(k)


def row_entropy(row: np.ndarray) -> float:
    """Shannon entropy in nats over the nonzero entries"""
    p = row[row > 0]
    return float(-(p * np.log(p)).sum())


def entropy_class_of(entropy: float, k: int, thresholds: EntropyThresholds) -> EntropyClass:
    """Classify an entropy value against the thresholds for vocabulary size k"""
    low, high = thresholds.bounds(k)
    if entropy < low:
        return EntropyClass.LOW
    if entropy < high:
        return EntropyClass.MEDIUM
    return EntropyClass.HIGH


def derive_seed(namespace: str, seed: int) -> int:
    """Derive a seed for a named stream so namespaces never share RNG streams"""
    tag = int.from_bytes(hashlib.sha256(namespace.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic k×k matrix with per-row sparsity and entropy class"""
    rows: np.ndarray
    entropy_class: Tuple[EntropyClass, ...]
    thresholds: EntropyThresholds = field(default_factory=EntropyThresholds)

    @classmethod
    def from_rows(cls, rows: np.ndarray, thresholds: Optional[EntropyThresholds] = None) -> "TransitionMatrix":
        """Build from raw rows, computing classes and validating invariants"""
        thresholds = thresholds or EntropyThresholds()
        rows = np.array(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
            raise InvariantViolation(f"Transition matrix must be square, got shape {rows.shape}")
        k = rows.shape[0]
        classes = tuple(entropy_class_of(row_entropy(r), k, thresholds) for r in rows)
        rows.setflags(write=False)
        matrix = cls(rows=rows, entropy_class=classes, thresholds=thresholds)
        matrix.validate()
        return matrix

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def row_sparsity(self) -> np.ndarray:
        return np.count_nonzero(self.rows, axis=1)

    @property
    def entropies(self) -> np.ndarray:
        return np.array([row_entropy(r) for r in self.rows])

    @property
    def matrix_id(self) -> str:
        return content_digest({"rows": self.rows}, self._header())[:16]

    def rows_in_class(self, entropy_class: EntropyClass) -> List[int]:
        """Indices of rows carrying the given class"""
        return [i for i, c in enumerate(self.entropy_class) if c == entropy_class]

    def validate(self) -> None:
        """Check row-stochasticity, entry range and class consistency"""
        if self.k < 2:
            raise InvariantViolation(f"Vocabulary size must be >= 2, got {self.k}")
        if np.any(self.rows < 0) or np.any(self.rows > 1):
            raise InvariantViolation("Transition entries must lie in [0, 1]")
        sums = self.rows.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE)
        if bad.size:
            raise InvariantViolation(f"Rows {bad.tolist()} do not sum to 1 (sums={sums[bad].tolist()})")
        if len(self.entropy_class) != self.k:
            raise InvariantViolation("entropy_class must have one label per row")
        for i, row in enumerate(self.rows):
            expected = entropy_class_of(row_entropy(row), self.k, self.thresholds)
            if self.entropy_class[i] != expected:
                raise InvariantViolation(
                    f"Row {i} labelled {self.entropy_class[i].value} but entropy says {expected.value}"
                )

    def _header(self) -> dict:
        return {
            "entropy_class": [c.value for c in self.entropy_class],
            "thresholds": [self.thresholds.low, self.thresholds.high],
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return (
            np.array_equal(self.rows, other.rows)
            and self.entropy_class == other.entropy_class
            and self.thresholds == other.thresholds
        )

    def __hash__(self) -> int:
        return hash(self.matrix_id)


@dataclass(frozen=True)
class TriggerSpec:
    """Set of trigger token ids"""
    tokens: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(sorted(int(t) for t in self.tokens)))
        if len(set(self.tokens)) != len(self.tokens):
            raise InvariantViolation(f"Trigger tokens must be distinct: {self.tokens}")

    @property
    def count(self) -> int:
        return len(self.tokens)

    def validate(self, k: int) -> None:
        """Check that every trigger lies in [0, k)"""
        for t in self.tokens:
            if not 0 <= t < k:
                raise InvariantViolation(f"Trigger token {t} outside [0, {k})")

    def mask(self, k: int) -> np.ndarray:
        """Boolean vector marking trigger tokens"""
        out = np.zeros(k, dtype=bool)
        out[list(self.tokens)] = True
        return out


@dataclass(frozen=True, eq=False)
class SequenceDataset:
    """Fixed-length token sequences with per-sequence copy targets"""
    sequences: np.ndarray
    copy_targets: np.ndarray
    triggers: TriggerSpec
    k: int
    source_matrix_id: str
    seed: int

    @property
    def n(self) -> int:
        return self.sequences.shape[0]

    @property
    def length(self) -> int:
        return self.sequences.shape[1]

    @property
    def per_trigger(self) -> bool:
        return self.copy_targets.ndim == 2

    @property
    def dataset_id(self) -> str:
        arrays, header = self._payload()
        return content_digest(arrays, header)[:16]

    def target_table(self) -> np.ndarray:
        """Copy targets as an (n, trigger count) table in both target modes"""
        if self.per_trigger:
            return self.copy_targets
        return np.repeat(self.copy_targets[:, None], max(self.triggers.count, 1), axis=1)

    def subset(self, count: int) -> "SequenceDataset":
        """The first `count` sequences as a new dataset"""
        return SequenceDataset(
            sequences=self.sequences[:count],
            copy_targets=self.copy_targets[:count],
            triggers=self.triggers,
            k=self.k,
            source_matrix_id=self.source_matrix_id,
            seed=self.seed,
        )

    def validate(self) -> None:
        """Check token ranges, shape and trigger consistency"""
        if self.sequences.ndim != 2:
            raise InvariantViolation("sequences must be a 2-D array")
        if self.sequences.size and (self.sequences.min() < 0 or self.sequences.max() >= self.k):
            raise InvariantViolation(f"Token ids must lie in [0, {self.k})")
        if self.copy_targets.shape[0] != self.n:
            raise InvariantViolation("copy_targets must have one entry per sequence")
        self.triggers.validate(self.k)
        violations = trigger_violations(self)
        if violations:
            raise InvariantViolation(f"{violations} trigger occurrences not followed by the copy target")

    def _payload(self) -> Tuple[dict, dict]:
        arrays = {"sequences": self.sequences, "copy_targets": self.copy_targets}
        header = {
            "k": self.k,
            "length": self.length,
            "seed": self.seed,
            "triggers": list(self.triggers.tokens),
            "source_matrix_id": self.source_matrix_id,
        }
        return arrays, header


def trigger_violations(dataset: SequenceDataset) -> int:
    """Count trigger occurrences not followed by their copy target"""
    if not dataset.triggers.count or dataset.length < 2:
        return 0
    table = dataset.target_table()
    position = np.full(dataset.k, -1)
    position[list(dataset.triggers.tokens)] = np.arange(dataset.triggers.count)

    current = dataset.sequences[:, :-1]
    following = dataset.sequences[:, 1:]
    seq_idx, pos_idx = np.nonzero(position[current] >= 0)
    expected = table[seq_idx, position[current[seq_idx, pos_idx]]]
    return int(np.count_nonzero(following[seq_idx, pos_idx] != expected))


def _temper_to_entropy(weights: np.ndarray, target: float, iterations: int = 200) -> np.ndarray:
    """Raise weights to a power so the normalised row has the target entropy"""
    support = weights > 0
    log_w = np.log(weights[support])
    lo, hi = -30.0, 30.0  # bracket on log(beta)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if row_entropy(_normalise_logits(math.exp(mid) * log_w)) > target:
            lo = mid
        else:
            hi = mid
    out = np.zeros_like(weights, dtype=np.float64)
    out[support] = _normalise_logits(math.exp(hi) * log_w)
    return out


def _normalise_logits(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def _normalise(row: np.ndarray) -> np.ndarray:
    return row / row.sum()


def _low_row(k: int, rng: np.random.Generator, low_bound: float, support: Tuple[int, int], decay: float) -> np.ndarray:
    m = min(int(rng.integers(support[0], support[1] + 1)), k)
    tokens = rng.choice(k, size=m, replace=False)
    row = np.zeros(k)
    row[tokens] = _normalise(decay ** np.arange(m))
    if row_entropy(row) >= low_bound:
        row = _temper_to_entropy(row, 0.5 * low_bound)
    return row


def _medium_row(k: int, rng: np.random.Generator, bounds: Tuple[float, float], ratio: float) -> np.ndarray:
    low_bound, high_bound = bounds
    size = max(math.ceil(k / 4), 2)
    while size < k and math.log(size) <= low_bound:
        size += 1
    size = min(size, k)
    tokens = rng.choice(k, size=size, replace=False)
    row = np.zeros(k)
    row[tokens] = _normalise(ratio ** np.arange(size))
    h = row_entropy(row)
    if not low_bound <= h < high_bound:
        target = min(0.5 * (low_bound + high_bound), 0.5 * (low_bound + math.log(size)))
        row = _temper_to_entropy(row, target)
    return row


def _high_row(k: int, rng: np.random.Generator, high_bound: float, concentration: float) -> np.ndarray:
    row = rng.dirichlet(np.full(k, concentration))
    if row_entropy(row) < high_bound:
        row = _temper_to_entropy(row, 0.5 * (high_bound + math.log(k)))
    return row


def build_matrix(
    k: int,
    class_plan: Sequence[Union[EntropyClass, str]],
    seed: int,
    thresholds: Optional[EntropyThresholds] = None,
    low_support: Tuple[int, int] = (3, 5),
    low_decay: float = 0.25,
    medium_ratio: float = 0.7,
    high_concentration: float = 50.0,
) -> TransitionMatrix:
    """
    Build an entropy-stratified transition matrix.

    Low rows put geometric mass (decay `low_decay`) on 3–5 random tokens,
    medium rows put mass on ceil(k/4) tokens with geometric ratio
    `medium_ratio`, high rows are Dirichlet(`high_concentration`) over the full
    vocabulary. Rows landing outside their entropy band are tempered into it.
    Row i draws from the stream keyed by (seed, i).
    """
    if k < 2:
        raise InvariantViolation(f"k must be >= 2, got {k}")
    if len(class_plan) != k:
        raise InvariantViolation(f"class_plan has {len(class_plan)} entries, expected {k}")
    if low_support[0] < 1 or low_support[1] < low_support[0]:
        raise InvariantViolation(f"Invalid low_support range {low_support}")

    thresholds = thresholds or EntropyThresholds()
    bounds = thresholds.bounds(k)
    rows = np.zeros((k, k))
    for i, planned in enumerate(class_plan):
        rng = np.random.default_rng([seed, i])
        planned = EntropyClass(planned)
        if planned is EntropyClass.LOW:
            rows[i] = _low_row(k, rng, bounds[0], low_support, low_decay)
        elif planned is EntropyClass.MEDIUM:
            rows[i] = _medium_row(k, rng, bounds, medium_ratio)
        else:
            rows[i] = _high_row(k, rng, bounds[1], high_concentration)

    matrix = TransitionMatrix.from_rows(rows, thresholds)
    mismatched = [i for i, c in enumerate(class_plan) if EntropyClass(c) != matrix.entropy_class[i]]
    if mismatched:
        raise InvariantViolation(f"Rows {mismatched} could not be placed in their planned entropy class")

    logger.debug(f"Built {k}x{k} transition matrix {matrix.matrix_id} (seed={seed})")
    return matrix


def build_sparse_matrix(k: int, p: int, seed: int, thresholds: Optional[EntropyThresholds] = None) -> TransitionMatrix:
    """Matrix whose rows each have exactly p nonzero Dirichlet(1) entries"""
    if k < 2:
        raise InvariantViolation(f"k must be >= 2, got {k}")
    if not 1 <= p <= k:
        raise InvariantViolation(f"Row sparsity p must lie in [1, {k}], got {p}")
    rows = np.zeros((k, k))
    for i in range(k):
        rng = np.random.default_rng([seed, i])
        tokens = rng.choice(k, size=p, replace=False)
        rows[i, tokens] = rng.dirichlet(np.ones(p)) if p > 1 else 1.0
    return TransitionMatrix.from_rows(rows, thresholds)


def class_plan_from_fractions(k: int, fractions: dict, seed: int) -> List[EntropyClass]:
    """Assign classes to rows in the given proportions, shuffled by seed"""
    counts = {EntropyClass(name): int(math.floor(frac * k)) for name, frac in fractions.items()}
    remainder = k - sum(counts.values())
    ordered = [EntropyClass.LOW, EntropyClass.MEDIUM, EntropyClass.HIGH]
    for c in ordered[:remainder]:
        counts[c] = counts.get(c, 0) + 1
    plan = [c for c in ordered for _ in range(counts.get(c, 0))]
    return [plan[i] for i in np.random.default_rng(seed).permutation(k)]


def apply_trigger(matrix: TransitionMatrix, trigger: int, copy_target: int) -> TransitionMatrix:
    """Replace the trigger's row with the one-hot vector on copy_target"""
    k = matrix.k
    for name, token in (("trigger", trigger), ("copy_target", copy_target)):
        if not 0 <= token < k:
            raise InvariantViolation(f"{name} {token} outside [0, {k})")
    rows = np.array(matrix.rows)
    rows[trigger] = 0.0
    rows[trigger, copy_target] = 1.0
    return TransitionMatrix.from_rows(rows, matrix.thresholds)


def boost_triggers(matrix: TransitionMatrix, triggers: TriggerSpec, boost: float) -> TransitionMatrix:
    """Mix uniform mass over the triggers into every non-trigger row"""
    if not 0.0 <= boost < 1.0:
        raise InvariantViolation(f"boost must lie in [0, 1), got {boost}")
    triggers.validate(matrix.k)
    if boost == 0.0 or not triggers.count:
        return matrix
    mask = triggers.mask(matrix.k)
    rows = np.array(matrix.rows)
    uniform = mask / mask.sum()
    rows[~mask] = (1.0 - boost) * rows[~mask] + boost * uniform
    rows[~mask] /= rows[~mask].sum(axis=1, keepdims=True)
    return TransitionMatrix.from_rows(rows, matrix.thresholds)


def choose_triggers(k: int, count: int, seed: int) -> TriggerSpec:
    """Pick `count` distinct trigger tokens uniformly at random"""
    if not 0 <= count < k:
        raise InvariantViolation(f"Trigger count must lie in [0, {k}), got {count}")
    rng = np.random.default_rng(seed)
    return TriggerSpec(tuple(int(t) for t in rng.choice(k, size=count, replace=False)))


def _inverse_cdf_step(cdf: np.ndarray, last_support: np.ndarray, current: np.ndarray, u: np.ndarray) -> np.ndarray:
    nxt = (cdf[current] <= u[:, None]).sum(axis=1)
    return np.minimum(nxt, last_support[current])


def _sampling_tables(matrix: TransitionMatrix) -> Tuple[np.ndarray, np.ndarray]:
    cdf = np.cumsum(matrix.rows, axis=1)
    last_support = matrix.k - 1 - np.argmax(matrix.rows[:, ::-1] > 0, axis=1)
    return cdf, last_support


def sample_sequences(
    matrix: TransitionMatrix,
    triggers: TriggerSpec,
    n: int,
    length: int,
    seed: int,
    per_trigger_targets: bool = False,
) -> SequenceDataset:
    """
    Sample n sequences of the given length.

    Each sequence draws a copy target c uniformly from [0, k), its first token
    uniformly, and every next token from the current token's row of the
    trigger-modified matrix. Sequence i uses only the stream keyed by
    (seed, i), so results do not depend on generation order.
    """
    if n < 1:
        raise InvariantViolation(f"n must be >= 1, got {n}")
    if length < 2:
        raise InvariantViolation(f"Sequence length must be >= 2, got {length}")
    if seed < 0:
        raise InvariantViolation(f"seed must be non-negative, got {seed}")
    matrix.validate()
    triggers.validate(matrix.k)

    k = matrix.k
    n_triggers = triggers.count
    n_draws = 2 + (length - 1) + (n_triggers if per_trigger_targets else 0)
    draws = np.stack([np.random.default_rng([seed, i]).random(n_draws) for i in range(n)])

    to_token = lambda u: np.minimum((u * k).astype(np.int64), k - 1)
    copy_targets = to_token(draws[:, 0])
    if per_trigger_targets and n_triggers:
        copy_targets = to_token(draws[:, 1 + length:1 + length + n_triggers])
    table = copy_targets if copy_targets.ndim == 2 else copy_targets[:, None]

    trigger_position = np.full(k, -1)
    trigger_position[list(triggers.tokens)] = np.arange(n_triggers)
    if not per_trigger_targets:
        trigger_position[list(triggers.tokens)] = 0

    cdf, last_support = _sampling_tables(matrix)
    tokens = np.empty((n, length), dtype=np.int64)
    tokens[:, 0] = to_token(draws[:, 1])
    for j in range(1, length):
        current = tokens[:, j - 1]
        nxt = _inverse_cdf_step(cdf, last_support, current, draws[:, 1 + j])
        slot = trigger_position[current]
        hit = slot >= 0
        if hit.any():
            nxt[hit] = table[np.flatnonzero(hit), slot[hit]]
        tokens[:, j] = nxt

    dataset = SequenceDataset(
        sequences=tokens,
        copy_targets=copy_targets,
        triggers=triggers,
        k=k,
        source_matrix_id=matrix.matrix_id,
        seed=seed,
    )
    dataset.validate()
    logger.debug(f"Sampled {n} sequences of length {length} from {matrix.matrix_id} (seed={seed})")
    return dataset


def sample_pairs(matrix: TransitionMatrix, n: int, seed: SeedLike) -> SequenceDataset:
    """n length-2 sequences from a single seeded stream, first token uniform"""
    if n < 1:
        raise InvariantViolation(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    k = matrix.k
    first = rng.integers(0, k, size=n)
    cdf, last_support = _sampling_tables(matrix)
    second = _inverse_cdf_step(cdf, last_support, first, rng.random(n))
    return SequenceDataset(
        sequences=np.stack([first, second], axis=1).astype(np.int64),
        copy_targets=rng.integers(0, k, size=n),
        triggers=TriggerSpec(),
        k=k,
        source_matrix_id=matrix.matrix_id,
        seed=int(seed) if isinstance(seed, (int, np.integer)) else int(seed[0]),
    )


@dataclass(frozen=True)
class RowCounts:
    """Transition counts n_ij and row totals n_i"""
    counts: np.ndarray
    totals: np.ndarray

    @property
    def k(self) -> int:
        return self.counts.shape[0]


def empirical_row_counts(dataset: Union[SequenceDataset, np.ndarray], k: Optional[int] = None) -> RowCounts:
    """Count transitions i→j over every adjacent pair"""
    sequences = dataset.sequences if isinstance(dataset, SequenceDataset) else np.asarray(dataset)
    k = dataset.k if isinstance(dataset, SequenceDataset) else k
    if k is None:
        raise InvariantViolation("Vocabulary size is required for raw sequence arrays")
    if sequences.size == 0 or sequences.shape[0] == 0:
        raise InvariantViolation("Cannot count transitions of an empty dataset")
    current = sequences[:, :-1].ravel()
    following = sequences[:, 1:].ravel()
    counts = np.bincount(current * k + following, minlength=k * k).reshape(k, k)
    return RowCounts(counts=counts, totals=counts.sum(axis=1))


def save_matrix(matrix: TransitionMatrix, path: Union[str, Path]) -> str:
    """Persist a transition matrix"""
    return write_archive(path, {"rows": matrix.rows}, matrix._header())


def load_matrix(path: Union[str, Path]) -> TransitionMatrix:
    """Load a matrix written by save_matrix"""
    arrays, header = read_archive(path)
    matrix = TransitionMatrix.from_rows(arrays["rows"], EntropyThresholds(*header["thresholds"]))
    if [c.value for c in matrix.entropy_class] != header["entropy_class"]:
        raise InvariantViolation(f"Stored entropy classes disagree with row entropies in {path}")
    return matrix


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name.replace(".npz", "") + ".matrix.npz")


def save_dataset(dataset: SequenceDataset, path: Union[str, Path], matrix: TransitionMatrix) -> str:
    """Persist a dataset plus a sidecar with its generating matrix"""
    path = Path(path)
    save_matrix(matrix, _sidecar(path))
    arrays, header = dataset._payload()
    return write_archive(path, arrays, header)


def load_dataset(path: Union[str, Path]) -> Tuple[SequenceDataset, TransitionMatrix]:
    """Load a dataset and its generating matrix"""
    path = Path(path)
    arrays, header = read_archive(path)
    dataset = SequenceDataset(
        sequences=arrays["sequences"].astype(np.int64),
        copy_targets=arrays["copy_targets"].astype(np.int64),
        triggers=TriggerSpec(tuple(header["triggers"])),
        k=int(header["k"]),
        source_matrix_id=header["source_matrix_id"],
        seed=int(header["seed"]),
    )
    dataset.validate()
    return dataset, load_matrix(_sidecar(path))


def hash_rows(sequences: Iterable[np.ndarray]) -> set:
    """Set of sequence byte-hashes for overlap checks"""
    return {hashlib.sha1(np.ascontiguousarray(s, dtype=np.int64).tobytes()).hexdigest() for s in sequences}
