"""
Perturbation tables and perturbed MAP values
Full (one Gumbel per configuration) and low-dimensional (one Gumbel per
(variable, label)) perturbations, the partial maxima V_j with a fixed prefix,
and sample-mean estimates of E[V_j] with their concentration radius.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from concentration import BoundParams, corollary2_bound
from errors import CorruptTableError, InvalidArgumentError, UnsupportedModelError
from gumbel import RngStream, sample_gumbel
from model import (
    FORBIDDEN,
    Configuration,
    DiscreteModel,
    all_potentials,
    check_enumerable,
    conditional_slice,
    potential,
    validate_configuration,
)
from solvers import MapResult, get_solver, max_values_batch

logger = logging.getLogger(__name__)

# Stream id reserved for reference-mean runs, disjoint from replicate ids
REFERENCE_STREAM = 2 ** 32


class PerturbationKind(Enum):
    FULL = "full"
    LOWDIM = "lowdim"


@dataclass(frozen=True, eq=False)
class PerturbationTable:
    """
    The collection Gamma of i.i.d. Gumbel draws, stored flat.

    FULL: values[config_index(x)] = gamma(x), m = |X|.
    LOWDIM: values[offsets[i] + x_i] = gamma_i(x_i), m = sum_i |X_i|.
    """

    kind: PerturbationKind
    sizes: Tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        sizes = tuple(int(k) for k in self.sizes)
        expected = math.prod(sizes) if self.kind is PerturbationKind.FULL else sum(sizes)
        if values.size != expected:
            raise CorruptTableError(
                f"{self.kind.value} table for sizes {sizes} needs {expected} entries, has {values.size}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "sizes", sizes)

    @property
    def m(self) -> int:
        return int(self.values.size)

    @property
    def is_lowdim(self) -> bool:
        return self.kind is PerturbationKind.LOWDIM

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.sizes)[:-1])).astype(int) if self.sizes else np.zeros(0, int)

    def check(self, model: DiscreteModel) -> None:
        if self.sizes != model.sizes:
            raise CorruptTableError(f"table drawn for sizes {self.sizes}, model has {model.sizes}")

    def coordinate(self, i: int) -> np.ndarray:
        """gamma_i(.) of a low-dimensional table"""
        self._require_lowdim()
        start = int(self.offsets[i])
        return self.values[start:start + self.sizes[i]]

    def unary_shifts(self, model: DiscreteModel) -> List[np.ndarray]:
        self.check(model)
        return [self.coordinate(i) for i in range(len(self.sizes))]

    def gamma(self, x: Configuration) -> float:
        """gamma(x): one lookup (FULL) or sum_i gamma_i(x_i) (LOWDIM)"""
        try:
            if self.kind is PerturbationKind.FULL:
                flat = int(np.ravel_multi_index(tuple(x), self.sizes)) if self.sizes else 0
                return float(self.values[flat])
            return float(sum(self.values[o + v] for o, v in zip(self.offsets, x)))
        except (IndexError, ValueError) as e:
            raise CorruptTableError(f"no perturbation entry for {x}: {e}") from e

    def config_scores(self, model: DiscreteModel, cap: Optional[int] = None) -> np.ndarray:
        """gamma over every configuration of `model`, lexicographic order"""
        self.check(model)
        if self.kind is PerturbationKind.FULL:
            return np.asarray(self.values)
        count = check_enumerable(model, cap)
        scores = np.zeros(count)
        if model.n == 0:
            return scores
        grid = np.indices(model.sizes).reshape(model.n, count).T
        for i in range(model.n):
            scores += self.coordinate(i)[grid[:, i]]
        return scores

    def restrict(self, start: int) -> "PerturbationTable":
        """Low-dimensional table over coordinates start..n-1 (0-based)"""
        self._require_lowdim()
        first = int(self.offsets[start]) if start < len(self.sizes) else self.m
        return PerturbationTable(PerturbationKind.LOWDIM, self.sizes[start:], self.values[first:])

    def bumped(self, i: int, label: int, eps: float) -> "PerturbationTable":
        """Copy with gamma_i(label) increased by eps"""
        self._require_lowdim()
        values = np.array(self.values)
        values[int(self.offsets[i]) + label] += eps
        return PerturbationTable(self.kind, self.sizes, values)

    def _require_lowdim(self):
        if self.kind is not PerturbationKind.LOWDIM:
            raise CorruptTableError("operation needs a low-dimensional table")


def draw_perturbation(
    model: DiscreteModel,
    kind: PerturbationKind,
    rng: RngStream,
    cap: Optional[int] = None,
) -> PerturbationTable:
    """Fresh table of i.i.d. zero-mean Gumbel draws"""
    kind = PerturbationKind(kind)
    if kind is PerturbationKind.FULL:
        m = check_enumerable(model, cap)
    else:
        m = sum(model.sizes)
    return PerturbationTable(kind, model.sizes, sample_gumbel(rng, size=m))


def perturbed_value(model: DiscreteModel, table: PerturbationTable, x: Sequence[int]) -> float:
    """theta(x) + gamma(x)"""
    x = validate_configuration(model, x)
    table.check(model)
    theta = potential(model, x)
    if theta == FORBIDDEN:
        return FORBIDDEN
    return theta + table.gamma(x)


def v_j(
    model: DiscreteModel,
    prefix: Sequence[int],
    table: Optional[PerturbationTable],
    solver: str = "brute",
) -> MapResult:
    """
    V_j = max over x_{j:n} of theta(prefix, x_{j:n}) + sum_{i>=j} gamma_i(x_i),
    with j = len(prefix) + 1. The table covers coordinates j..n (a full-length
    table is restricted). For j = n + 1 the value is theta(prefix).
    The returned argmax is the complete configuration prefix + suffix.
    """
    prefix = tuple(int(v) for v in prefix)
    k = len(prefix)
    if k == model.n:
        x = validate_configuration(model, prefix)
        return MapResult(argmax=x, value=potential(model, x), solver="none")

    sliced = conditional_slice(model, prefix)
    if table is None:
        shifts = [np.zeros(s) for s in sliced.sizes]
    else:
        if not table.is_lowdim:
            raise UnsupportedModelError("V_j needs a low-dimensional perturbation table")
        if k and table.sizes == model.sizes:
            table = table.restrict(k)
        shifts = table.unary_shifts(sliced)

    result = get_solver(solver)(sliced.fold_unary(shifts))
    return MapResult(argmax=prefix + result.argmax, value=result.value, solver=result.solver)


def vj_samples(
    model: DiscreteModel,
    prefix: Sequence[int],
    count: int,
    rng: RngStream,
    solver: str = "brute",
) -> np.ndarray:
    """`count` independent realizations of V_j, each under a fresh low-dimensional table"""
    prefix = tuple(int(v) for v in prefix)
    if count < 1:
        raise InvalidArgumentError("sample count must be >= 1")
    if len(prefix) == model.n:
        return np.full(count, potential(model, validate_configuration(model, prefix)))
    sliced = conditional_slice(model, prefix)
    shifts = [sample_gumbel(rng, size=(count, k)) for k in sliced.sizes]
    return max_values_batch(sliced, shifts, solver)


@dataclass
class EstimateReport:
    """Sample mean of V_j with its concentration radius at confidence delta"""

    j: int
    prefix: Configuration
    sample_mean: float
    M: int
    delta: float
    radius: float
    standard_error: float = math.nan
    solver_calls: int = 0
    raw_samples: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, object]:
        return {
            "j": self.j,
            "prefix": list(self.prefix),
            "sample_mean": self.sample_mean,
            "M": self.M,
            "delta": self.delta,
            "radius": self.radius,
            "standard_error": self.standard_error,
        }


def estimate_expected_vj(
    model: DiscreteModel,
    prefix: Sequence[int],
    j: int,
    M: int,
    delta: float,
    rng: RngStream,
    solver: str = "brute",
    keep_samples: bool = False,
) -> EstimateReport:
    """
    M-sample mean of V_j. The radius is the one-sided deviation bound with
    a^2 = n - j + 1 and b = 1 (the gradient of V_j is an indicator of the
    maximizing labels of the free coordinates).

    Args:
        model: Model over n variables
        prefix: Label indices of x_1..x_{j-1}
        j: 1-based coordinate; must equal len(prefix) + 1
        M: Number of independent LOWDIM tables, one MAP solve each
        delta: Failure probability of the reported radius
        rng: Stream the tables are drawn from, in order
        solver: "brute" or "mincut"
        keep_samples: Keep the M values of V_j on the report

    Returns:
        EstimateReport with the sample mean, its radius and standard error

    Raises:
        InvalidArgumentError: If j does not match the prefix or M, delta are out of range
    """
    prefix = tuple(int(v) for v in prefix)
    if j != len(prefix) + 1:
        raise InvalidArgumentError(f"V_{j} needs a prefix of length {j - 1}, got {len(prefix)}")
    samples = vj_samples(model, prefix, M, rng, solver)
    radius = corollary2_bound(BoundParams(a2=model.n - j + 1, b=1.0, M=M, delta=delta))
    report = EstimateReport(
        j=j,
        prefix=prefix,
        sample_mean=float(samples.mean()),
        M=M,
        delta=delta,
        radius=radius,
        standard_error=float(samples.std(ddof=1) / math.sqrt(M)) if M > 1 else math.nan,
        solver_calls=M,
        raw_samples=samples if keep_samples else None,
    )
    logger.debug(f"[ESTIMATE] E[V_{j}] ~ {report.sample_mean:.6f} (M={M}, radius={radius:.4f})")
    return report


# ============================================================================
# Deviation experiments
# ============================================================================

@dataclass(frozen=True)
class ReferenceEstimate:
    """High-M sample mean of V_1 used to center deviations"""

    mean: float
    standard_error: float
    M: int


@dataclass(frozen=True)
class DeviationSample:
    """One centered sample mean F = mean(V_1) - reference"""

    value: float
    reference_mean: float
    M: int
    replicate: int


def reference_expectation(
    model: DiscreteModel,
    M: int,
    rng: RngStream,
    solver: str = "brute",
) -> ReferenceEstimate:
    samples = vj_samples(model, (), M, rng, solver)
    se = float(samples.std(ddof=1) / math.sqrt(M)) if M > 1 else math.inf
    logger.info(f"[ESTIMATE] Reference E[V_1] = {samples.mean():.6f} +- {se:.6f} (M={M})")
    return ReferenceEstimate(mean=float(samples.mean()), standard_error=se, M=M)


def _replicate_means(args) -> List[float]:
    model, M_values, rng, solver = args
    return [float(vj_samples(model, (), M, rng, solver).mean()) for M in M_values]


def replicate_sample_means(
    model: DiscreteModel,
    M_values: Sequence[int],
    replicates: int,
    rng: RngStream,
    solver: str = "brute",
    workers: int = None,
) -> np.ndarray:
    """
    (replicates, len(M_values)) matrix of V_1 sample means. Replicate r draws
    sequentially from rng.spawn(r), so results do not depend on `workers`.
    """
    if replicates < 1 or any(M < 1 for M in M_values):
        raise InvalidArgumentError("replicate and sample counts must be >= 1")
    workers = config.WORKERS if workers is None else workers
    jobs = [(model, tuple(M_values), rng.spawn(r), solver) for r in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_replicate_means, jobs, chunksize=max(1, replicates // (4 * workers))))
    else:
        rows = [_replicate_means(job) for job in jobs]
    return np.asarray(rows, dtype=np.float64).reshape(replicates, len(M_values))


def deviation_experiment(
    model: DiscreteModel,
    M_values: Sequence[int],
    replicates: int,
    rng: RngStream,
    reference_M: int = None,
    solver: str = "brute",
    workers: int = None,
    reference: Optional[ReferenceEstimate] = None,
) -> Tuple[ReferenceEstimate, Dict[int, List[DeviationSample]]]:
    """
    For each M, `replicates` independent M-sample means of V_1 centered at a
    high-M reference mean (drawn from a dedicated stream unless supplied).

    Args:
        model: Model whose V_1 is sampled
        M_values: Sample counts per mean
        replicates: Means per M; replicate r draws from rng.spawn(r)
        rng: Parent stream; distinct parents give distinct replicates
        reference_M: Samples behind the reference mean (config.REFERENCE_M by default)
        solver: "brute" or "mincut"
        workers: Worker processes; results do not depend on it
        reference: Precomputed reference, skips the reference run

    Returns:
        (reference, {M: [DeviationSample per replicate]})
    """
    reference_M = config.REFERENCE_M if reference_M is None else reference_M
    if reference is None:
        reference = reference_expectation(model, reference_M, rng.spawn(REFERENCE_STREAM), solver)
    means = replicate_sample_means(model, M_values, replicates, rng, solver, workers)
    deviations = {
        M: [DeviationSample(value=float(means[r, col] - reference.mean), reference_mean=reference.mean,
                            M=M, replicate=r)
            for r in range(replicates)]
        for col, M in enumerate(M_values)
    }
    return reference, deviations


# ============================================================================
# Full perturbations and gradient structure
# ============================================================================

def perturbed_max_full(
    model: DiscreteModel,
    M: int,
    rng: RngStream,
    cap: Optional[int] = None,
) -> Tuple[float, float]:
    """Mean and standard error of max_x {theta(x) + gamma(x)} over M FULL tables (estimates log Z)"""
    theta = all_potentials(model, cap)
    block = max(1, 2 ** 22 // theta.size)
    maxima = np.empty(M)
    for start in range(0, M, block):
        stop = min(M, start + block)
        maxima[start:stop] = (theta[None, :] + sample_gumbel(rng, size=(stop - start, theta.size))).max(axis=1)
    se = float(maxima.std(ddof=1) / math.sqrt(M)) if M > 1 else math.inf
    return float(maxima.mean()), se


@dataclass(frozen=True)
class GradientCheck:
    """Finite-difference derivative of V_1 in one perturbation entry"""

    coordinate: Tuple[int, int]
    indicator: float
    finite_difference: float
    argmax_stable: bool

    @property
    def passed(self) -> bool:
        return self.argmax_stable and abs(self.finite_difference - self.indicator) <= 1e-4


def gradient_check(
    model: DiscreteModel,
    table: PerturbationTable,
    coordinate: Tuple[int, int],
    eps: float = 1e-6,
    solver: str = "brute",
) -> GradientCheck:
    """dV_1 / dgamma_i(x_i) should be 1 when x_i is in the maximizer and 0 otherwise"""
    i, label = coordinate
    base = v_j(model, (), table, solver)
    bumped = v_j(model, (), table.bumped(i, label, eps), solver)
    return GradientCheck(
        coordinate=(i, label),
        indicator=1.0 if base.argmax[i] == label else 0.0,
        finite_difference=(bumped.value - base.value) / eps,
        argmax_stable=bumped.argmax == base.argmax,
    )

