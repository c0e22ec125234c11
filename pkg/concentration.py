"""
Concentration bounds and functional-inequality validators

Closed forms:
    exp-moment bound     E[exp(lam (F - E F))] <= exp(5 a^2 lam^2),  |lam| <= 1 / (10 b)
    deviation radius     r = max(20 b / M log(1/delta), sqrt(20 a^2 / M log(1/delta)))
and quadrature checks of the Poincare inequality for log-concave densities
(with its Gumbel specialization, constant 4) and of the modified log-Sobolev
inequality for the Gumbel measure.
"""

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

import config
from errors import DomainError, InvalidArgumentError
from gumbel import EULER_GAMMA, GUMBEL_DOMAIN

logger = logging.getLogger(__name__)

FUNCTION_SUITE_VERSION = "1"


# ============================================================================
# Closed-form bounds
# ============================================================================

@dataclass(frozen=True)
class BoundParams:
    """Gradient bounds ||grad F||^2 <= a2, ||grad F||_inf <= b; M samples; confidence 1 - delta"""

    a2: float
    b: float
    M: int
    delta: float

    def __post_init__(self):
        if not (self.a2 >= 0 and math.isfinite(self.a2)):
            raise InvalidArgumentError(f"a2 must be finite and >= 0, got {self.a2}")
        if not (self.b > 0 and math.isfinite(self.b)):
            raise InvalidArgumentError(f"b must be finite and > 0, got {self.b}")
        if self.M < 1:
            raise InvalidArgumentError(f"M must be >= 1, got {self.M}")
        if not 0 < self.delta < 1:
            raise InvalidArgumentError(f"delta must lie in (0, 1), got {self.delta}")


def bound_branches(p: BoundParams) -> Tuple[float, float]:
    """(linear, square-root) branches of the deviation radius"""
    log_term = math.log(1.0 / p.delta)
    return 20.0 * p.b / p.M * log_term, math.sqrt(20.0 * p.a2 / p.M * log_term)


def corollary2_bound(p: BoundParams) -> float:
    """Radius r with P(mean of M draws - E[F] > r) <= delta"""
    return max(bound_branches(p))


def two_sided_bound(n_dims: float, M: int, delta: float) -> float:
    """|mean - E[F]| radius at confidence 1 - delta for a2 = n_dims, b = 1 (delta split over both tails)"""
    return corollary2_bound(BoundParams(a2=n_dims, b=1.0, M=M, delta=delta / 2.0))


def exp_moment_bound(p: BoundParams, lam: float) -> float:
    """exp(5 a^2 lam^2), valid for |lam| <= 1 / (10 b)"""
    if abs(lam) > 1.0 / (10.0 * p.b) * (1 + 1e-12):
        raise DomainError(f"|lambda| = {abs(lam)} exceeds 1/(10 b) = {1.0 / (10.0 * p.b)}")
    return math.exp(5.0 * p.a2 * lam ** 2)


def exp_moment_monte_carlo(samples: Sequence[float], lam: float) -> float:
    """Empirical E[exp(lam (F - mean F))] of observed draws of F"""
    values = np.asarray(samples, dtype=np.float64)
    return float(np.mean(np.exp(lam * (values - values.mean()))))


@dataclass
class SamplePlan:
    """Per-coordinate sample counts M_j for the sequential sampler"""

    epsilon: float
    delta_prime: float
    per_step_delta: float
    M: List[int]
    expectations_per_step: List[int]

    @property
    def ratio_factor(self) -> float:
        """Every estimated step ratio lies within this factor of the exact one (w.p. 1 - delta')"""
        return math.exp(2.0 * self.epsilon)

    @property
    def total_solver_calls(self) -> int:
        return int(sum(m * e for m, e in zip(self.M, self.expectations_per_step)))


def epsilon_delta_plan(sizes: Sequence[int], epsilon: float, delta_prime: float) -> SamplePlan:
    """
    Smallest M_j with two_sided_bound(n - j + 1, M_j, delta'/n) <= epsilon for
    j = 1..n; then exp(-2 eps) <= p_hat_j / p_j <= exp(2 eps) for all j with
    probability 1 - delta'.
    """
    n = len(sizes)
    if n < 1:
        raise InvalidArgumentError("plan needs at least one variable")
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be > 0")
    if not 0 < delta_prime < 1:
        raise InvalidArgumentError("delta' must lie in (0, 1)")

    step_delta = delta_prime / n
    log_term = math.log(2.0 / step_delta)
    counts = []
    for j in range(1, n + 1):
        a2 = n - j + 1
        M = max(1, math.ceil(max(20.0 * log_term / epsilon, 20.0 * a2 * log_term / epsilon ** 2)))
        # float slack around the closed form
        while two_sided_bound(a2, M, step_delta) > epsilon:
            M += 1
        while M > 1 and two_sided_bound(a2, M - 1, step_delta) <= epsilon:
            M -= 1
        counts.append(M)
    return SamplePlan(
        epsilon=epsilon,
        delta_prime=delta_prime,
        per_step_delta=step_delta,
        M=counts,
        expectations_per_step=[int(k) + 1 for k in sizes],
    )


# ============================================================================
# Densities and test functions
# ============================================================================

@dataclass(frozen=True)
class ScalarFunctionSpec:
    """
    Test function h with closed-form derivative. `derivative_bound` is the
    declared sup |h'| (the certificate used for lambda range checks); `decays`
    certifies h(y) q(y) -> 0 in both tails.
    """

    name: str
    h: Callable[[np.ndarray], np.ndarray]
    dh: Callable[[np.ndarray], np.ndarray]
    derivative_bound: float = math.inf
    decays: bool = True


@dataclass(frozen=True)
class LogConcaveDensitySpec:
    """q(y) = exp(-phi(y)) with convex phi minimized at `minimizer`"""

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    d2phi: Callable[[np.ndarray], np.ndarray]
    minimizer: float
    domain: Tuple[float, float]
    normalization_tol: float = 1e-6

    def density(self, y):
        return np.exp(-self.phi(y))

    def validate(self) -> float:
        """Check normalization and the one-sided derivative conditions near the minimizer; returns the mass"""
        mass, _ = _integrate(lambda y: np.ones_like(y), self)
        if abs(mass - 1.0) > self.normalization_tol:
            raise InvalidArgumentError(f"{self.name} density integrates to {mass}, not 1")
        for side in (-1.0, 1.0):
            y = self.minimizer + side * 1e-6
            if self.dphi(y) == 0 and self.d2phi(y) == 0:
                raise InvalidArgumentError(f"{self.name}: phi' and phi'' both vanish next to the minimizer")
        return mass


def gaussian_density() -> LogConcaveDensitySpec:
    half_log_2pi = 0.5 * math.log(2 * math.pi)
    return LogConcaveDensitySpec(
        name="gaussian",
        phi=lambda y: 0.5 * np.square(y) + half_log_2pi,
        dphi=lambda y: np.asarray(y, dtype=np.float64),
        d2phi=lambda y: np.ones_like(np.asarray(y, dtype=np.float64)),
        minimizer=0.0,
        domain=(-12.0, 12.0),
    )


def laplace_density() -> LogConcaveDensitySpec:
    # Outside [-30, 30] the Laplace mass is ~1e-13; [-12, 12] would leave 6e-6
    return LogConcaveDensitySpec(
        name="laplace",
        phi=lambda y: np.abs(y) + math.log(2.0),
        dphi=lambda y: np.sign(y),
        d2phi=lambda y: np.zeros_like(np.asarray(y, dtype=np.float64)),
        minimizer=0.0,
        domain=(-30.0, 30.0),
    )


def gumbel_density() -> LogConcaveDensitySpec:
    """phi(y) = y + c + exp(-(y + c)); q is the zero-mean Gumbel pdf"""
    return LogConcaveDensitySpec(
        name="gumbel",
        phi=lambda y: (y + EULER_GAMMA) + np.exp(-(y + EULER_GAMMA)),
        dphi=lambda y: 1.0 - np.exp(-(y + EULER_GAMMA)),
        d2phi=lambda y: np.exp(-(y + EULER_GAMMA)),
        minimizer=-EULER_GAMMA,
        domain=GUMBEL_DOMAIN,
    )


def linear_function() -> ScalarFunctionSpec:
    return ScalarFunctionSpec("linear", lambda y: np.asarray(y, dtype=np.float64),
                              lambda y: np.ones_like(np.asarray(y, dtype=np.float64)), 1.0)


def constant_function(value: float = 1.0) -> ScalarFunctionSpec:
    return ScalarFunctionSpec("constant", lambda y: np.full_like(np.asarray(y, dtype=np.float64), value),
                              lambda y: np.zeros_like(np.asarray(y, dtype=np.float64)), 0.0)


def _bump(center: float) -> ScalarFunctionSpec:
    return ScalarFunctionSpec(
        name=f"bump({center:+g})",
        h=lambda y: np.exp(-0.5 * np.square(y - center)),
        dh=lambda y: -(y - center) * np.exp(-0.5 * np.square(y - center)),
        derivative_bound=math.exp(-0.5),
    )


def function_suite() -> List[ScalarFunctionSpec]:
    """The fixed suite of ten bounded smooth test functions (version FUNCTION_SUITE_VERSION)"""
    return [
        ScalarFunctionSpec("tanh", np.tanh, lambda y: 1.0 - np.tanh(y) ** 2, 1.0),
        ScalarFunctionSpec("tanh(y/2)", lambda y: np.tanh(0.5 * y),
                           lambda y: 0.5 * (1.0 - np.tanh(0.5 * y) ** 2), 0.5),
        ScalarFunctionSpec("arctan", np.arctan, lambda y: 1.0 / (1.0 + np.square(y)), 1.0),
        ScalarFunctionSpec("logistic", special.expit,
                           lambda y: special.expit(y) * (1.0 - special.expit(y)), 0.25),
        ScalarFunctionSpec("sin", np.sin, np.cos, 1.0),
    ] + [_bump(c) for c in (-2.0, -1.0, 0.0, 1.0, 2.0)]


# ============================================================================
# Quadrature
# ============================================================================

@dataclass
class InequalityReport:
    """Numerically evaluated sides of a functional inequality lhs <= rhs"""

    inequality: str
    parameters: Dict[str, object]
    lhs: float
    rhs: float
    ratio: float
    quadrature_error: float
    verdict: str

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


class _Budget:
    def __init__(self, max_eval: int):
        self.remaining = max_eval
        self.converged = True

    def spend(self, neval: int, ier: int):
        self.remaining -= neval
        if ier != 0 or self.remaining < 0:
            self.converged = False


def _integrate(f: Callable, dens: LogConcaveDensitySpec, budget: Optional[_Budget] = None,
               tol: Optional[float] = None) -> Tuple[float, float]:
    """
    int f(y) q(y) dy over the truncated domain, split at the minimizer.
    Returns (value, absolute error estimate).
    """
    # each integral gets a share of the report tolerance; a report sums several
    tol = config.QUAD_TOL / 100 if tol is None else tol
    budget = budget or _Budget(config.QUAD_MAX_EVAL)
    lo, hi = dens.domain
    pieces = [(lo, dens.minimizer), (dens.minimizer, hi)] if lo < dens.minimizer < hi else [(lo, hi)]

    def integrand(y):
        with np.errstate(over="ignore", under="ignore"):
            return float(f(y) * dens.density(y))

    total, error = 0.0, 0.0
    for a, b in pieces:
        limit = max(50, budget.remaining // 21)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            out = integrate.quad(integrand, a, b, epsabs=tol / len(pieces), epsrel=0.0,
                                 limit=limit, full_output=1)
        value, abserr, info = out[0], out[1], out[2]
        budget.spend(int(info["neval"]), 0 if len(out) == 3 else 1)
        total += value
        error += abserr
    return total, error


def _expectation(f: Callable, dens: LogConcaveDensitySpec, mass: float, budget: _Budget) -> Tuple[float, float]:
    value, error = _integrate(f, dens, budget)
    return value / mass, error / mass


def _ratio(lhs: float, rhs: float, tol: float) -> float:
    if abs(rhs) <= tol:
        return 0.0 if abs(lhs) <= tol else math.inf
    return lhs / rhs


def _report(name: str, parameters: Dict[str, object], lhs: float, rhs: float,
            error: float, budget: _Budget) -> InequalityReport:
    tol = config.QUAD_TOL
    if abs(lhs) <= error + tol:
        lhs = max(lhs, 0.0)
    ratio = _ratio(lhs, rhs, max(error, tol))
    if not budget.converged or error > tol:
        verdict = "inconclusive"
    elif lhs <= rhs + max(error, 1e-12):
        verdict = "holds"
    else:
        verdict = "violated"
    report = InequalityReport(name, parameters, float(lhs), float(rhs), float(ratio), float(error), verdict)
    logger.info(f"[QUAD] {name} {parameters}: lhs={lhs:.10g} rhs={rhs:.10g} ratio={ratio:.6g} -> {verdict}")
    return report


def _variance(h: ScalarFunctionSpec, dens: LogConcaveDensitySpec, mass: float,
              budget: _Budget) -> Tuple[float, float]:
    mean, err_mean = _expectation(h.h, dens, mass, budget)
    var, err_var = _expectation(lambda y: (h.h(y) - mean) ** 2, dens, mass, budget)
    return var, err_var + 2 * abs(mean) * err_mean


def check_poincare(dens: LogConcaveDensitySpec, h: ScalarFunctionSpec, eta: float) -> InequalityReport:
    """
    Var_mu(h) <= 1/(1 - eta) int h'^2 / (phi'' + eta phi'^2) q dy.
    eta = 0 is the Brascamp-Lieb inequality for strongly log-concave q.
    """
    if not 0 <= eta < 1:
        raise InvalidArgumentError(f"eta must lie in [0, 1), got {eta}")
    if not h.decays:
        raise InvalidArgumentError(f"{h.name} carries no tail-decay certificate")

    def weight(y):
        return dens.d2phi(y) + eta * np.square(dens.dphi(y))

    grid = np.linspace(*dens.domain, 2001)
    grid = grid[np.abs(grid - dens.minimizer) > 1e-9]
    if np.any(weight(grid) <= 0):
        raise InvalidArgumentError(f"phi'' + eta phi'^2 vanishes on {dens.name} at eta={eta}")

    budget = _Budget(config.QUAD_MAX_EVAL)
    mass, _ = _integrate(lambda y: np.ones_like(y), dens, budget)
    lhs, err_lhs = _variance(h, dens, mass, budget)
    integral, err_rhs = _expectation(lambda y: np.square(h.dh(y)) / weight(y), dens, mass, budget)
    scale = 1.0 / (1.0 - eta)
    return _report("poincare", {"density": dens.name, "h": h.name, "eta": eta},
                   lhs, scale * integral, err_lhs + scale * err_rhs, budget)


def check_gumbel_poincare(h: ScalarFunctionSpec) -> InequalityReport:
    """Var_mu(h) <= 4 int h'^2 dmu under the Gumbel measure"""
    if not h.decays:
        raise InvalidArgumentError(f"{h.name} carries no tail-decay certificate")
    dens = gumbel_density()
    budget = _Budget(config.QUAD_MAX_EVAL)
    mass, _ = _integrate(lambda y: np.ones_like(y), dens, budget)
    lhs, err_lhs = _variance(h, dens, mass, budget)
    integral, err_rhs = _expectation(lambda y: np.square(h.dh(y)), dens, mass, budget)
    return _report("gumbel-poincare", {"h": h.name}, lhs, 4.0 * integral, err_lhs + 4.0 * err_rhs, budget)


def mlsi_prefactor(rho: float) -> float:
    """2 ((1 + rho)/(1 - rho))^2 exp(2 sqrt(5) rho); about 4.672 at rho = 1/10"""
    if not 0 <= rho < 1:
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    return 2.0 * ((1.0 + rho) / (1.0 - rho)) ** 2 * math.exp(2.0 * math.sqrt(5.0) * rho)


def check_modified_log_sobolev(h: ScalarFunctionSpec, lam: float, rho: float) -> InequalityReport:
    """
    Ent_mu(exp(lam h)) <= 2 lam^2 ((1+rho)/(1-rho))^2 exp(2 sqrt(5) rho) int h'^2 exp(lam h) dmu
    under the Gumbel measure, for |lam| sup|h'| <= rho < 1.
    """
    if not h.decays:
        raise InvalidArgumentError(f"{h.name} carries no tail-decay certificate")
    if not 0 <= rho < 1:
        raise DomainError(f"rho must lie in [0, 1), got {rho}")
    if abs(lam) * h.derivative_bound > rho * (1 + 1e-12):
        raise DomainError(f"|lambda| * sup|h'| = {abs(lam) * h.derivative_bound} exceeds rho = {rho}")

    dens = gumbel_density()
    budget = _Budget(config.QUAD_MAX_EVAL)
    mass, _ = _integrate(lambda y: np.ones_like(y), dens, budget)
    mean, err_mean = _expectation(h.h, dens, mass, budget)

    # Ent(e^{lam h}) = e^{lam m} Ent(e^g), g = lam (h - m), split into two
    # pointwise-nonnegative pieces to avoid cancellation at small lam
    def g(y):
        return lam * (h.h(y) - mean)

    first, err_first = _expectation(lambda y: g(y) * np.exp(g(y)) - np.expm1(g(y)), dens, mass, budget)
    s, err_s = _expectation(lambda y: np.expm1(g(y)), dens, mass, budget)
    second = (1.0 + s) * math.log1p(s) - s
    scale = math.exp(lam * mean)
    lhs = scale * (first - second)

    integral, err_rhs = _expectation(lambda y: np.square(h.dh(y)) * np.exp(lam * h.h(y)), dens, mass, budget)
    prefactor = mlsi_prefactor(rho) * lam ** 2
    error = scale * (err_first + abs(math.log1p(s)) * err_s) + prefactor * err_rhs + abs(lam) * err_mean * abs(lhs)
    return _report("log-sobolev", {"h": h.name, "lambda": lam, "rho": rho},
                   lhs, prefactor * integral, error, budget)


# ============================================================================
# Poincare constant sweep
# ============================================================================

def gumbel_poincare_constant(eta: float) -> float:
    """
    Constant 1 / ((1 - eta) L(eta)) obtained from the lower bound L(eta) of
    phi'' + eta phi'^2 for the Gumbel density: L = eta for eta <= 1/2,
    (4 eta - 1)/(4 eta) above.
    """
    if not 0 < eta < 1:
        raise DomainError(f"eta must lie in (0, 1), got {eta}")
    lower = eta if eta <= 0.5 else (4.0 * eta - 1.0) / (4.0 * eta)
    return 1.0 / ((1.0 - eta) * lower)


def gumbel_weight_lower_bound(eta: float, grid: Optional[np.ndarray] = None) -> float:
    """Numerical inf over y of phi''(y) + eta phi'(y)^2 for the Gumbel density"""
    dens = gumbel_density()
    y = np.linspace(-EULER_GAMMA - 5.0, 40.0, 200001) if grid is None else grid
    return float(np.min(dens.d2phi(y) + eta * np.square(dens.dphi(y))))


@dataclass
class PoincareSweep:
    etas: np.ndarray = field(repr=False)
    constants: np.ndarray = field(repr=False)
    best_eta: float
    best_constant: float


def sweep_poincare_constant(step: float = 0.01) -> PoincareSweep:
    """Scan eta over (0, 1); the smallest admissible constant is 4, at eta = 1/2"""
    count = int(round(1.0 / step))
    etas = np.array([k * step for k in range(1, count)])
    constants = np.array([gumbel_poincare_constant(eta) for eta in etas])
    best = int(np.argmin(constants))
    return PoincareSweep(etas=etas, constants=constants, best_eta=float(etas[best]),
                         best_constant=float(constants[best]))
