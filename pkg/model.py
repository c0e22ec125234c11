"""
Discrete pairwise graphical models
Potential functions theta(x) over finite label sets, with enumeration-based
ground truth: log-partition function, Gibbs probabilities, conditional slices.

Configurations are tuples of label *indices* in each variable's domain order;
`DiscreteModel.encode` / `decode` translate to and from the labels themselves.
Enumeration order is lexicographic in those indices (variable 0 most
significant), so the flat index of a configuration is its lexicographic rank.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

import config
from errors import InfeasibleModelError, InvalidArgumentError, ResourceLimitError
from gumbel import logsumexp

logger = logging.getLogger(__name__)

Label = Hashable
Configuration = Tuple[int, ...]

# Score of a configuration outside Dom(theta). Assigned explicitly, never
# reached through arithmetic on finite scores.
FORBIDDEN = -math.inf


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """
    theta(x) = offset + sum_i unary[i][x_i] + sum_{i<j} pairwise[(i, j)][x_i, x_j],
    or FORBIDDEN when x is listed in `forbidden`.

    Instances are immutable after construction and safe to share between workers.
    """

    domains: Tuple[Tuple[Label, ...], ...]
    unary: Tuple[np.ndarray, ...] = None
    pairwise: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    forbidden: frozenset = frozenset()
    offset: float = 0.0

    def __post_init__(self):
        domains = tuple(tuple(d) for d in self.domains)
        for i, dom in enumerate(domains):
            if len(dom) < 1:
                raise InvalidArgumentError(f"variable {i} has an empty domain")
            if len(set(dom)) != len(dom):
                raise InvalidArgumentError(f"variable {i} has repeated labels")
        sizes = tuple(len(d) for d in domains)

        if self.unary is None:
            unary = tuple(np.zeros(k) for k in sizes)
        else:
            if len(self.unary) != len(sizes):
                raise InvalidArgumentError("one unary table per variable is required")
            unary = tuple(np.array(u, dtype=np.float64).reshape(-1) for u in self.unary)
            for i, (u, k) in enumerate(zip(unary, sizes)):
                if u.shape != (k,):
                    raise InvalidArgumentError(f"unary table {i} has shape {u.shape}, expected ({k},)")
                if not np.all(np.isfinite(u)):
                    raise InvalidArgumentError(f"unary table {i} holds non-finite scores")

        pairwise = {}
        for key, table in dict(self.pairwise).items():
            i, j = (int(key[0]), int(key[1]))
            if not (0 <= i < j < len(sizes)):
                raise InvalidArgumentError(f"pairwise factor {key} needs 0 <= i < j < n")
            table = np.array(table, dtype=np.float64)
            if table.shape != (sizes[i], sizes[j]):
                raise InvalidArgumentError(
                    f"pairwise table {key} has shape {table.shape}, expected {(sizes[i], sizes[j])}")
            if not np.all(np.isfinite(table)):
                raise InvalidArgumentError(f"pairwise table {key} holds non-finite scores")
            pairwise[(i, j)] = table

        forbidden = set()
        for x in self.forbidden:
            x = tuple(int(v) for v in x)
            if len(x) != len(sizes):
                raise InvalidArgumentError(f"forbidden configuration {x} does not list every variable")
            _validate_indices(sizes, x)
            forbidden.add(x)

        if not math.isfinite(self.offset):
            raise InvalidArgumentError("offset must be finite")
        if forbidden and len(forbidden) >= math.prod(sizes):
            raise InfeasibleModelError("every configuration is forbidden")

        for arr in list(unary) + list(pairwise.values()):
            arr.setflags(write=False)
        object.__setattr__(self, "domains", domains)
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "pairwise", dict(sorted(pairwise.items())))
        object.__setattr__(self, "forbidden", frozenset(forbidden))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self) -> int:
        return len(self.domains)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(d) for d in self.domains)

    @property
    def num_configurations(self) -> int:
        return math.prod(self.sizes)

    @property
    def is_binary(self) -> bool:
        return all(k == 2 for k in self.sizes)

    def encode(self, labels: Sequence[Label]) -> Configuration:
        """Labels -> label indices"""
        if len(labels) != self.n:
            raise InvalidArgumentError(f"expected {self.n} labels, got {len(labels)}")
        try:
            return tuple(dom.index(label) for dom, label in zip(self.domains, labels))
        except ValueError as e:
            raise InvalidArgumentError(f"label outside its domain: {e}") from e

    def decode(self, x: Configuration) -> Tuple[Label, ...]:
        """Label indices -> labels"""
        return tuple(dom[v] for dom, v in zip(self.domains, x))

    def fold_unary(self, shifts: Sequence[np.ndarray]) -> "DiscreteModel":
        """Copy of the model with shifts[i][x_i] added to every unary table"""
        if len(shifts) != self.n:
            raise InvalidArgumentError("one shift vector per variable is required")
        return DiscreteModel(
            domains=self.domains,
            unary=tuple(u + np.asarray(s, dtype=np.float64) for u, s in zip(self.unary, shifts)),
            pairwise=self.pairwise,
            forbidden=self.forbidden,
            offset=self.offset,
        )

    def __repr__(self) -> str:
        return (f"DiscreteModel(n={self.n}, sizes={self.sizes}, "
                f"pairwise={len(self.pairwise)}, forbidden={len(self.forbidden)})")


def _validate_indices(sizes: Sequence[int], x: Sequence[int]) -> None:
    for i, (v, k) in enumerate(zip(x, sizes)):
        if not 0 <= v < k:
            raise InvalidArgumentError(f"coordinate {i} = {v} outside 0..{k - 1}")


def validate_configuration(model: DiscreteModel, x: Sequence[int]) -> Configuration:
    x = tuple(int(v) for v in x)
    if len(x) != model.n:
        raise InvalidArgumentError(f"configuration has {len(x)} coordinates, model has {model.n}")
    _validate_indices(model.sizes, x)
    return x


def check_enumerable(model: DiscreteModel, cap: Optional[int] = None) -> int:
    cap = config.ENUMERATION_CAP if cap is None else cap
    count = model.num_configurations
    if count > cap:
        raise ResourceLimitError(f"|X| = {count} exceeds the enumeration cap {cap}")
    return count


def potential(model: DiscreteModel, x: Sequence[int]) -> float:
    """theta(x), or FORBIDDEN when x lies outside Dom(theta)"""
    x = validate_configuration(model, x)
    if x in model.forbidden:
        return FORBIDDEN
    value = model.offset
    for u, v in zip(model.unary, x):
        value += u[v]
    for (i, j), table in model.pairwise.items():
        value += table[x[i], x[j]]
    return float(value)


def configurations(model: DiscreteModel, cap: Optional[int] = None) -> np.ndarray:
    """(|X|, n) matrix of every configuration, rows in lexicographic order"""
    count = check_enumerable(model, cap)
    if model.n == 0:
        return np.zeros((1, 0), dtype=np.intp)
    return np.indices(model.sizes).reshape(model.n, count).T


def config_index(model: DiscreteModel, x: Sequence[int]) -> int:
    """Lexicographic rank of x"""
    if model.n == 0:
        return 0
    return int(np.ravel_multi_index(tuple(x), model.sizes))


def all_potentials(model: DiscreteModel, cap: Optional[int] = None) -> np.ndarray:
    """theta over every configuration, in lexicographic order"""
    grid = configurations(model, cap)
    theta = np.full(grid.shape[0], model.offset)
    for i, u in enumerate(model.unary):
        theta += u[grid[:, i]]
    for (i, j), table in model.pairwise.items():
        theta += table[grid[:, i], grid[:, j]]
    if model.forbidden:
        theta[[config_index(model, x) for x in model.forbidden]] = FORBIDDEN
    return theta


def log_partition_exact(model: DiscreteModel, cap: Optional[int] = None) -> float:
    """log Z = log sum_x exp(theta(x)) by max-shifted enumeration"""
    log_z = logsumexp(all_potentials(model, cap))
    logger.debug(f"[MODEL] log Z = {log_z:.10f} over {model.num_configurations} configurations")
    return log_z


def gibbs_distribution(model: DiscreteModel, cap: Optional[int] = None) -> np.ndarray:
    """Gibbs probabilities of every configuration, in lexicographic order"""
    theta = all_potentials(model, cap)
    log_z = logsumexp(theta)
    with np.errstate(under="ignore"):
        return np.exp(theta - log_z)


def gibbs_probability(model: DiscreteModel, x: Sequence[int], cap: Optional[int] = None) -> float:
    """p(x) = exp(theta(x) - log Z)"""
    x = validate_configuration(model, x)
    log_z = log_partition_exact(model, cap)
    theta = potential(model, x)
    return 0.0 if theta == FORBIDDEN else float(math.exp(theta - log_z))


def conditional_slice(model: DiscreteModel, prefix: Sequence[int]) -> DiscreteModel:
    """
    Model over the variables after `prefix` with the prefix-dependent factors
    folded in: potential(slice, suffix) == potential(model, prefix + suffix).
    """
    prefix = tuple(int(v) for v in prefix)
    k = len(prefix)
    if k > model.n:
        raise InvalidArgumentError(f"prefix of length {k} is longer than the model ({model.n})")
    _validate_indices(model.sizes, prefix)
    if k == 0:
        return model

    offset = model.offset + sum(model.unary[i][v] for i, v in enumerate(prefix))
    unary = [np.array(u) for u in model.unary[k:]]
    pairwise = {}
    for (i, j), table in model.pairwise.items():
        if j < k:
            offset += table[prefix[i], prefix[j]]
        elif i < k:
            unary[j - k] += table[prefix[i], :]
        else:
            pairwise[(i - k, j - k)] = table

    forbidden = frozenset(x[k:] for x in model.forbidden if x[:k] == prefix)
    return DiscreteModel(
        domains=model.domains[k:],
        unary=tuple(unary),
        pairwise=pairwise,
        forbidden=forbidden,
        offset=offset,
    )


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    """Half the l1 distance between two distributions on the same support"""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidArgumentError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


# ============================================================================
# JSON model files
# ============================================================================

def model_from_dict(data: Dict[str, Any]) -> DiscreteModel:
    """Build a model from the JSON document layout (domains/unary/pairwise/forbidden)"""
    try:
        domains = [tuple(d) for d in data["domains"]]
        index = [{label: a for a, label in enumerate(d)} for d in domains]
        unary = [np.zeros(len(d)) for d in domains]
        for entry in data.get("unary", []):
            i = int(entry["var"])
            unary[i][index[i][entry["label"]]] += float(entry["score"])

        pairwise: Dict[Tuple[int, int], np.ndarray] = {}
        for entry in data.get("pairwise", []):
            i, j = int(entry["var_i"]), int(entry["var_j"])
            a, b = index[i][entry["label_i"]], index[j][entry["label_j"]]
            if i > j:
                i, j, a, b = j, i, b, a
            table = pairwise.setdefault((i, j), np.zeros((len(domains[i]), len(domains[j]))))
            table[a, b] += float(entry["score"])

        forbidden = [tuple(index[i][label] for i, label in enumerate(x)) for x in data.get("forbidden", [])]
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise InvalidArgumentError(f"malformed model document: {e!r}") from e

    if any(len(x) != len(domains) for x in forbidden):
        raise InvalidArgumentError("forbidden configurations must list every variable")
    return DiscreteModel(domains=domains, unary=unary, pairwise=pairwise, forbidden=frozenset(forbidden))


def model_to_dict(model: DiscreteModel) -> Dict[str, Any]:
    """Inverse of model_from_dict; the offset is spread into the first unary table"""
    if model.n == 0:
        raise InvalidArgumentError("a model without variables has no file representation")
    unary: List[Dict[str, Any]] = []
    for i, (dom, table) in enumerate(zip(model.domains, model.unary)):
        for a, label in enumerate(dom):
            score = float(table[a]) + (model.offset if i == 0 else 0.0)
            unary.append({"var": i, "label": label, "score": score})
    pairwise = [
        {"var_i": i, "var_j": j, "label_i": model.domains[i][a], "label_j": model.domains[j][b],
         "score": float(table[a, b])}
        for (i, j), table in model.pairwise.items()
        for a in range(table.shape[0])
        for b in range(table.shape[1])
    ]
    document = {"domains": [list(d) for d in model.domains], "unary": unary, "pairwise": pairwise}
    if model.forbidden:
        document["forbidden"] = [list(model.decode(x)) for x in sorted(model.forbidden)]
    return document


def load_model(path) -> DiscreteModel:
    """Read a JSON model file"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidArgumentError(f"cannot read model file {path}: {e}") from e
    model = model_from_dict(data)
    logger.info(f"[MODEL] Loaded {path}: {model}")
    return model


def save_model(model: DiscreteModel, path) -> str:
    """Write a JSON model file"""
    output_path = Path(path)
    if output_path.parent != Path(""):
        output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(model_to_dict(model), f, indent=2)
    logger.info(f"[MODEL] Saved {model} to {output_path}")
    return str(output_path)


def independent_log_partition(model: DiscreteModel) -> float:
    """log Z of a model without pairwise factors or forbidden set: sum of per-variable logsumexp"""
    if model.pairwise and any(np.any(t != 0) for t in model.pairwise.values()):
        raise InvalidArgumentError("model has nonzero pairwise factors")
    if model.forbidden:
        raise InvalidArgumentError("model has forbidden configurations")
    return model.offset + sum(logsumexp(u) for u in model.unary)


def iter_configurations(model: DiscreteModel) -> Iterable[Configuration]:
    """Lazy lexicographic iteration, no cap"""
    return itertools.product(*(range(k) for k in model.sizes))
