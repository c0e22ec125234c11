"""
Gibbs samplers driven by perturbed MAP
- exact sampler: argmax of theta + gamma under a FULL perturbation
- sequential sampler: one coordinate at a time from ratios of estimated
  expected partial maxima, with a restart outcome
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

import config
from concentration import SamplePlan
from errors import InfeasibleModelError, InvalidArgumentError
from gumbel import RngStream, sample_gumbel
from model import Configuration, DiscreteModel, all_potentials, check_enumerable
from perturbation import EstimateReport, PerturbationKind, draw_perturbation, estimate_expected_vj
from solvers import map_bruteforce

logger = logging.getLogger(__name__)

PROB_TOL = 1e-9


# ============================================================================
# Exact sampler
# ============================================================================

def sample_exact(model: DiscreteModel, rng: RngStream, cap: Optional[int] = None) -> Configuration:
    """One Gibbs draw: argmax_x theta(x) + gamma(x) with gamma a fresh FULL table"""
    table = draw_perturbation(model, PerturbationKind.FULL, rng, cap)
    return map_bruteforce(model, table, cap).argmax


def sample_exact_many(
    model: DiscreteModel,
    count: int,
    rng: RngStream,
    cap: Optional[int] = None,
) -> np.ndarray:
    """(count, n) matrix of independent exact draws, one FULL table per row"""
    if count < 0:
        raise InvalidArgumentError("count must be >= 0")
    theta = all_potentials(model, cap)
    if np.all(np.isneginf(theta)):
        raise InfeasibleModelError("every configuration is forbidden")
    block = max(1, 2 ** 22 // theta.size)
    flat = np.empty(count, dtype=np.intp)
    for start in range(0, count, block):
        stop = min(count, start + block)
        flat[start:stop] = (theta[None, :] + sample_gumbel(rng, size=(stop - start, theta.size))).argmax(axis=1)
    if model.n == 0:
        return np.zeros((count, 0), dtype=np.intp)
    return np.stack(np.unravel_index(flat, model.sizes), axis=1)


def empirical_distribution(samples: Union[np.ndarray, Sequence[Configuration]], model: DiscreteModel,
                           cap: Optional[int] = None) -> np.ndarray:
    """Frequencies of each configuration, in lexicographic order"""
    total = check_enumerable(model, cap)
    rows = np.asarray(samples, dtype=np.intp).reshape(-1, model.n)
    if rows.shape[0] == 0:
        raise InvalidArgumentError("no samples")
    if model.n == 0:
        return np.ones(1)
    flat = np.ravel_multi_index(tuple(rows.T), model.sizes)
    return np.bincount(flat, minlength=total) / rows.shape[0]


# ============================================================================
# Sequential sampler
# ============================================================================

@dataclass
class EstimatorConfig:
    """
    How the sequential sampler estimates E[V_j]: `M` is either one count for
    every step or a per-step schedule M_1..M_n.
    """

    M: Union[int, Sequence[int]] = 1000
    delta: float = 0.05
    solver: str = "brute"

    def __post_init__(self):
        counts = [self.M] if isinstance(self.M, (int, np.integer)) else list(self.M)
        if not counts or any(int(m) < 1 for m in counts):
            raise InvalidArgumentError(f"sample counts must be >= 1, got {self.M}")
        if not 0 < self.delta < 1:
            raise InvalidArgumentError(f"delta must lie in (0, 1), got {self.delta}")

    @classmethod
    def from_plan(cls, plan: SamplePlan, solver: str = "brute") -> "EstimatorConfig":
        return cls(M=list(plan.M), delta=plan.per_step_delta, solver=solver)

    def samples_for(self, j: int, n: int) -> int:
        if isinstance(self.M, (int, np.integer)):
            return int(self.M)
        if len(self.M) != n:
            raise InvalidArgumentError(f"schedule lists {len(self.M)} counts for {n} variables")
        return int(self.M[j - 1])


@dataclass
class SequentialStepDistribution:
    """Distribution over x_j plus the restart outcome at coordinate j"""

    j: int
    probs: Dict[int, float]
    restart_prob: float
    clamped: bool = False
    raw_ratios: Dict[int, float] = field(default_factory=dict)
    estimates: List[EstimateReport] = field(default_factory=list, repr=False)

    def __post_init__(self):
        values = list(self.probs.values()) + [self.restart_prob]
        if any(not (-PROB_TOL <= p <= 1 + PROB_TOL) for p in values):
            raise InvalidArgumentError(f"step {self.j} has an entry outside [0, 1]: {values}")
        if abs(sum(values) - 1.0) > PROB_TOL:
            raise InvalidArgumentError(f"step {self.j} probabilities sum to {sum(values)}")

    @property
    def solver_calls(self) -> int:
        return sum(e.solver_calls for e in self.estimates)

    def outcomes(self) -> List[float]:
        """Probabilities of labels 0..|X_j|-1 followed by the restart outcome"""
        return [self.probs[label] for label in sorted(self.probs)] + [self.restart_prob]

    def to_dict(self) -> Dict[str, object]:
        return {
            "j": self.j,
            "probs": {str(k): v for k, v in self.probs.items()},
            "restart_prob": self.restart_prob,
            "clamped": self.clamped,
        }


def ratios_from_expectations(j: int, expected_vj: float, expected_next: Dict[int, float]) -> SequentialStepDistribution:
    """
    p_j(x_j) = exp(E[V_{j+1} | x_j] - E[V_j]), each clamped to [0, 1]. When the
    clamped values sum above 1 they are rescaled to sum to 1 and the restart
    probability is 0; otherwise the restart probability takes the remainder.
    """
    if not math.isfinite(expected_vj):
        raise InfeasibleModelError(f"E[V_{j}] is not finite for this prefix")
    raw = {}
    for label, value in expected_next.items():
        raw[label] = 0.0 if value == -math.inf else math.exp(value - expected_vj)
    clamped_probs = {label: min(1.0, max(0.0, r)) for label, r in raw.items()}
    clamped = any(r > 1.0 for r in raw.values())
    total = sum(clamped_probs.values())

    if total > 1.0:
        probs = {label: p / total for label, p in clamped_probs.items()}
        restart = 0.0
        clamped = True
    else:
        probs = clamped_probs
        restart = max(0.0, 1.0 - total)
    return SequentialStepDistribution(j=j, probs=probs, restart_prob=restart, clamped=clamped, raw_ratios=raw)


def step_distribution(
    model: DiscreteModel,
    prefix: Sequence[int],
    j: int,
    estimator: EstimatorConfig,
    rng: RngStream,
) -> SequentialStepDistribution:
    """Estimate E[V_j] once and E[V_{j+1}] for each x_j, then form the step distribution"""
    prefix = tuple(int(v) for v in prefix)
    if j != len(prefix) + 1 or j > model.n:
        raise InvalidArgumentError(f"step {j} needs a prefix of length {j - 1} and j <= {model.n}")
    M = estimator.samples_for(j, model.n)

    base = estimate_expected_vj(model, prefix, j, M, estimator.delta, rng, estimator.solver)
    estimates = [base]
    expected_next = {}
    for label in range(model.sizes[j - 1]):
        extended = prefix + (label,)
        try:
            report = estimate_expected_vj(model, extended, j + 1, M, estimator.delta, rng, estimator.solver)
        except InfeasibleModelError:
            report = EstimateReport(j=j + 1, prefix=extended, sample_mean=-math.inf, M=M,
                                    delta=estimator.delta, radius=math.inf)
        estimates.append(report)
        expected_next[label] = report.sample_mean

    dist = ratios_from_expectations(j, base.sample_mean, expected_next)
    dist.estimates = estimates
    if dist.clamped:
        logger.debug(f"[SAMPLER] step {j}: ratios {dist.raw_ratios} clamped")
    return dist


@dataclass
class SamplerTrace:
    """Outcome of one sequential sampling attempt chain"""

    accepted: Optional[Configuration] = None
    restarts: int = 0
    steps: List[SequentialStepDistribution] = field(default_factory=list, repr=False)
    solver_calls: int = 0
    budget_exhausted: bool = False

    @property
    def estimates(self) -> List[EstimateReport]:
        return [e for step in self.steps for e in step.estimates]

    @property
    def clamped_steps(self) -> int:
        return sum(1 for step in self.steps if step.clamped)

    def to_dict(self) -> Dict[str, object]:
        return {
            "accepted": list(self.accepted) if self.accepted is not None else None,
            "restarts": self.restarts,
            "budget_exhausted": self.budget_exhausted,
            "solver_calls": self.solver_calls,
            "clamped_steps": self.clamped_steps,
            "steps": [s.to_dict() for s in self.steps],
        }


def sample_sequential(
    model: DiscreteModel,
    estimator: EstimatorConfig,
    rng: RngStream,
    max_restarts: Optional[int] = None,
) -> SamplerTrace:
    """
    Draw x_1, ..., x_n in turn from the step distributions. Drawing the restart
    outcome discards the prefix and starts again at j = 1 with fresh
    perturbations; after `max_restarts` restarts the trace is returned without
    an accepted configuration.
    """
    max_restarts = config.MAX_RESTARTS if max_restarts is None else max_restarts
    if max_restarts < 0:
        raise InvalidArgumentError("max_restarts must be >= 0")
    trace = SamplerTrace()

    while True:
        prefix: Configuration = ()
        for j in range(1, model.n + 1):
            dist = step_distribution(model, prefix, j, estimator, rng)
            trace.steps.append(dist)
            trace.solver_calls += dist.solver_calls
            outcome = rng.choice(dist.outcomes())
            if outcome == model.sizes[j - 1]:
                break
            prefix += (outcome,)
        else:
            trace.accepted = prefix
            return trace

        trace.restarts += 1
        logger.debug(f"[SAMPLER] restart {trace.restarts} at step {len(prefix) + 1}")
        if trace.restarts > max_restarts:
            trace.budget_exhausted = True
            logger.warning(f"[SAMPLER] gave up after {max_restarts} restarts")
            return trace


def _sequential_job(args) -> SamplerTrace:
    model, estimator, seed, index, max_restarts = args
    return sample_sequential(model, estimator, RngStream(seed, index), max_restarts)


def sample_sequential_many(
    model: DiscreteModel,
    estimator: EstimatorConfig,
    count: int,
    seed: int,
    max_restarts: Optional[int] = None,
    workers: Optional[int] = None,
) -> List[SamplerTrace]:
    """`count` independent sequential samples; sample i uses stream (seed, i)"""
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    workers = config.WORKERS if workers is None else workers
    jobs = [(model, estimator, seed, i, max_restarts) for i in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_sequential_job, jobs, chunksize=max(1, count // (4 * workers))))
    else:
        traces = [_sequential_job(job) for job in jobs]
    accepted = sum(1 for t in traces if t.accepted is not None)
    logger.info(f"[SAMPLER] {accepted}/{count} sequential samples accepted, "
                f"{sum(t.restarts for t in traces)} restarts")
    return traces
