"""
Exact MAP solvers
Brute-force enumeration for any enumerable model, and a min-cut solver for
binary pairwise submodular (attractive) models.

Both solvers break ties toward the lexicographically smallest configuration.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from networkx.algorithms.flow import boykov_kolmogorov

from errors import InfeasibleModelError, InvalidArgumentError, SolverError, UnsupportedModelError
from model import Configuration, DiscreteModel, all_potentials, configurations, potential

if TYPE_CHECKING:
    from perturbation import PerturbationTable

logger = logging.getLogger(__name__)

# Relative slack on the submodularity condition B + C - A - D >= 0
SUBMODULAR_TOL = 1e-12

# Largest (samples x configurations) block scored at once by the batched brute-force path
_BATCH_CELLS = 2 ** 22


@dataclass(frozen=True)
class MapResult:
    """Maximizing configuration and maximum value of a (perturbed) potential"""

    argmax: Configuration
    value: float
    solver: str


@dataclass
class FlowNetwork:
    """Directed capacitated network; parallel edges add up"""

    num_nodes: int
    source: int
    sink: int
    edges: List[Tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.num_nodes < 2:
            raise InvalidArgumentError("a flow network needs at least two nodes")
        for node in (self.source, self.sink):
            if not 0 <= node < self.num_nodes:
                raise InvalidArgumentError(f"terminal {node} outside 0..{self.num_nodes - 1}")
        if self.source == self.sink:
            raise InvalidArgumentError("source and sink must differ")
        edges, self.edges = self.edges, []
        for u, v, capacity in edges:
            self.add_edge(u, v, capacity)

    def add_edge(self, u: int, v: int, capacity: float) -> None:
        capacity = float(capacity)
        if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
            raise InvalidArgumentError(f"edge ({u}, {v}) references a missing node")
        if not np.isfinite(capacity) or capacity < 0:
            raise InvalidArgumentError(f"edge ({u}, {v}) has invalid capacity {capacity}")
        self.edges.append((int(u), int(v), capacity))

    def cut_capacity(self, source_side: FrozenSet[int]) -> float:
        """Total capacity of edges leaving `source_side`"""
        return float(sum(c for u, v, c in self.edges if u in source_side and v not in source_side))

    def to_digraph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.num_nodes))
        for u, v, capacity in self.edges:
            if u == v:
                continue
            if graph.has_edge(u, v):
                graph[u][v]["capacity"] += capacity
            else:
                graph.add_edge(u, v, capacity=capacity)
        return graph


@dataclass(frozen=True)
class FlowResult:
    """Maximum flow value and a minimum cut (source side holds the source)"""

    value: float
    source_side: FrozenSet[int]
    sink_side: FrozenSet[int]


class _Residual:
    """Max-flow residual network with reachability queries"""

    def __init__(self, net: FlowNetwork):
        self.net = net
        graph = net.to_digraph()
        try:
            self.residual = boykov_kolmogorov(graph, net.source, net.sink)
        except (nx.NetworkXException, ValueError, IndexError) as e:
            raise SolverError(f"max-flow failed on a {net.num_nodes}-node network: {e!r}") from e
        self.value = float(self.residual.graph["flow_value"])
        total = sum(c for _, _, c in net.edges)
        self.tol = 1e-12 * max(1.0, total)

    def _open(self, u, v) -> bool:
        attrs = self.residual[u][v]
        return attrs["capacity"] - attrs["flow"] > self.tol

    def reachable_from_source(self) -> FrozenSet[int]:
        seen = {self.net.source}
        stack = [self.net.source]
        while stack:
            u = stack.pop()
            for v in self.residual.successors(u):
                if v not in seen and self._open(u, v):
                    seen.add(v)
                    stack.append(v)
        return frozenset(seen)

    def reaching_sink(self) -> FrozenSet[int]:
        seen = {self.net.sink}
        stack = [self.net.sink]
        while stack:
            v = stack.pop()
            for u in self.residual.predecessors(v):
                if u not in seen and self._open(u, v):
                    seen.add(u)
                    stack.append(u)
        return frozenset(seen)


def max_flow(net: FlowNetwork) -> FlowResult:
    """Exact maximum flow (Boykov-Kolmogorov) and the minimum cut nearest the source"""
    residual = _Residual(net)
    source_side = residual.reachable_from_source()
    nodes = frozenset(range(net.num_nodes))
    return FlowResult(value=residual.value, source_side=source_side, sink_side=nodes - source_side)


# ============================================================================
# MAP solvers
# ============================================================================

def map_bruteforce(
    model: DiscreteModel,
    perturb: Optional["PerturbationTable"] = None,
    cap: Optional[int] = None,
) -> MapResult:
    """argmax_x theta(x) (+ gamma(x)) by enumeration; first maximizer in lexicographic order"""
    scores = all_potentials(model, cap)
    if perturb is not None:
        scores = scores + perturb.config_scores(model, cap)
    if np.all(np.isneginf(scores)):
        raise InfeasibleModelError("every configuration is forbidden")
    best = int(np.argmax(scores))
    argmax = tuple(int(v) for v in np.unravel_index(best, model.sizes)) if model.n else ()
    return MapResult(argmax=argmax, value=float(scores[best]), solver="brute")


def _energy_network(model: DiscreteModel) -> Tuple[FlowNetwork, float]:
    """
    Graph for minimizing E = -theta over binary labels: node i on the sink
    side means x_i = 1. Returns the network and the constant such that
    E(x) = constant + cut(x).
    """
    n = model.n
    source, sink = n, n + 1
    net = FlowNetwork(num_nodes=n + 2, source=source, sink=sink)
    constant = -model.offset
    slope = np.zeros(n)  # E_i(1) - E_i(0) after absorbing pairwise residuals

    for i, u in enumerate(model.unary):
        constant += -u[0]
        slope[i] += -u[1] + u[0]

    for (i, j), table in model.pairwise.items():
        a, b, c, d = -table[0, 0], -table[0, 1], -table[1, 0], -table[1, 1]
        weight = b + c - a - d
        if weight < -SUBMODULAR_TOL * max(1.0, abs(a) + abs(b) + abs(c) + abs(d)):
            raise UnsupportedModelError(
                f"pairwise factor ({i}, {j}) is not submodular (B + C - A - D = {weight:.3g})")
        # E_ij = A + (C - A) x_i + (D - C) x_j + w (1 - x_i) x_j
        constant += a
        slope[i] += c - a
        slope[j] += d - c
        if weight > 0:
            net.add_edge(i, j, weight)

    for i in range(n):
        if slope[i] > 0:
            net.add_edge(source, i, slope[i])
        elif slope[i] < 0:
            constant += slope[i]
            net.add_edge(i, sink, -slope[i])
    return net, constant


def map_mincut(model: DiscreteModel, perturb: Optional["PerturbationTable"] = None) -> MapResult:
    """
    Exact MAP of a binary submodular pairwise model by one s-t min cut.
    Low-dimensional perturbations fold into the unary terms first.
    """
    if not model.is_binary:
        raise UnsupportedModelError("min-cut solver needs every variable to be binary")
    if model.forbidden:
        raise UnsupportedModelError("min-cut solver cannot encode forbidden configurations")
    if perturb is not None:
        if not perturb.is_lowdim:
            raise UnsupportedModelError("min-cut solver accepts low-dimensional perturbations only")
        model = model.fold_unary(perturb.unary_shifts(model))
    if model.n == 0:
        return MapResult(argmax=(), value=model.offset, solver="mincut")

    net, constant = _energy_network(model)
    residual = _Residual(net)
    # Nodes that can still reach the sink form the smallest sink side among
    # all minimum cuts: the componentwise (hence lexicographically) smallest labeling.
    ones = residual.reaching_sink()
    argmax = tuple(1 if i in ones else 0 for i in range(model.n))
    value = potential(model, argmax)

    expected = -(constant + residual.value)
    if abs(value - expected) > 1e-6 * max(1.0, abs(value)):
        logger.warning(f"[SOLVER] min-cut energy {expected:.12g} disagrees with potential {value:.12g}")
    return MapResult(argmax=argmax, value=value, solver="mincut")


SOLVERS: Dict[str, Callable[..., MapResult]] = {
    "brute": map_bruteforce,
    "mincut": map_mincut,
}


def get_solver(name: str) -> Callable[..., MapResult]:
    try:
        return SOLVERS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown solver '{name}' (choose from {', '.join(SOLVERS)})") from None


def max_values_batch(
    model: DiscreteModel,
    shifts: Sequence[np.ndarray],
    solver: str = "brute",
    cap: Optional[int] = None,
) -> np.ndarray:
    """
    max_x {theta(x) + sum_i shifts[i][s, x_i]} for every sample s.

    `shifts[i]` has shape (M, |X_i|). The brute-force path scores all samples
    against all configurations in blocks; other solvers run once per sample.
    """
    if len(shifts) != model.n:
        raise InvalidArgumentError("one shift matrix per variable is required")
    samples = shifts[0].shape[0] if model.n else 0
    if model.n == 0:
        raise InvalidArgumentError("batched maxima need at least one free variable")

    if solver == "brute":
        theta = all_potentials(model, cap)
        grid = configurations(model, cap)
        block = max(1, _BATCH_CELLS // theta.size)
        out = np.empty(samples)
        for start in range(0, samples, block):
            stop = min(samples, start + block)
            scores = np.broadcast_to(theta, (stop - start, theta.size)).copy()
            for i, s in enumerate(shifts):
                scores += s[start:stop][:, grid[:, i]]
            out[start:stop] = scores.max(axis=1)
        if np.any(np.isneginf(out)):
            raise InfeasibleModelError("every configuration is forbidden")
        return out

    solve = get_solver(solver)
    values = np.empty(samples)
    for s in range(samples):
        folded = model.fold_unary([shift[s] for shift in shifts])
        values[s] = solve(folded).value
    return values
