"""
Spin-glass benchmark harness
Grid spin-glass instances, the error-vs-coupling and deviation-histogram
experiments, CSV datasets and deterministic SVG plots, and the batch runner
that exports datasets and a summary report.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import config
from errors import DatasetParseError, InvalidArgumentError, PMapError
from gumbel import RngStream
from model import DiscreteModel, load_model
from perturbation import ReferenceEstimate, deviation_experiment

logger = logging.getLogger(__name__)

DATASET_VERSION = "pmap-dataset 1"
SPIN_LABELS = (-1, 1)

# Stream reserved for instance generation, disjoint from replicate/reference ids
MODEL_STREAM = 2 ** 32 + 1

ERROR_COLUMNS = ["c", "M", "mean_abs_error", "std_error", "replicates", "seed"]
HISTOGRAM_COLUMNS = ["M", "r", "exceed_count", "replicates"]


# ============================================================================
# Instances
# ============================================================================

@dataclass(frozen=True)
class SpinGlassConfig:
    """rows x cols grid; local fields ~ U[-field_range, field_range], couplings ~ U[0, coupling]"""

    rows: int = 10
    cols: int = 10
    coupling: float = 1.0
    field_range: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidArgumentError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if not (self.coupling >= 0 and math.isfinite(self.coupling)):
            raise InvalidArgumentError(f"coupling bound must be finite and >= 0, got {self.coupling}")


def grid_edges(rows: int, cols: int) -> List[Tuple[int, int]]:
    """4-neighbour edges (i, j), i < j, of a row-major grid, sorted"""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return sorted(edges)


def generate_spin_glass(cfg: SpinGlassConfig, rng: Optional[RngStream] = None) -> DiscreteModel:
    """
    theta(x) = sum_i theta_i x_i + sum_(i,j) theta_ij x_i x_j with x_i in {-1, +1}
    (domain indices 0, 1). All local fields are drawn first, then the couplings
    in sorted edge order.
    """
    rng = rng or RngStream(cfg.seed)
    n = cfg.rows * cfg.cols
    edges = grid_edges(cfg.rows, cfg.cols)
    spins = np.array(SPIN_LABELS, dtype=np.float64)

    fields_ = cfg.field_range * (2.0 * rng.uniform_open(n) - 1.0)
    couplings = cfg.coupling * rng.uniform_open(len(edges)) if edges else np.zeros(0)

    unary = [h * spins for h in fields_]
    pairwise = {edge: w * np.outer(spins, spins) for edge, w in zip(edges, couplings)}
    model = DiscreteModel(domains=[SPIN_LABELS] * n, unary=unary, pairwise=pairwise)
    logger.debug(f"[BENCH] spin glass {cfg.rows}x{cfg.cols}, c={cfg.coupling}: {len(edges)} edges")
    return model


# ============================================================================
# Experiment plans
# ============================================================================

def _default_couplings() -> List[float]:
    return [0.5 * k for k in range(9)]


@dataclass
class ExperimentPlan:
    """Settings shared by both experiments; JSON plan files override any subset"""

    rows: int = 10
    cols: int = 10
    model_path: Optional[str] = None
    M_values: List[int] = field(default_factory=lambda: [1, 5, 10])
    replicates: int = 100
    delta: float = 0.05
    coupling_grid: List[float] = field(default_factory=_default_couplings)
    coupling: float = 1.0
    reference_M: int = config.REFERENCE_M
    solver: str = "mincut"
    output_dir: str = config.OUTPUT_DIR
    seed: int = config.DEFAULT_SEED
    workers: int = config.WORKERS
    r_bins: int = 41

    def __post_init__(self):
        self.M_values = [int(m) for m in self.M_values]
        self.coupling_grid = [float(c) for c in self.coupling_grid]
        counts = [self.rows, self.cols, self.replicates, self.reference_M, self.workers, self.r_bins - 1]
        if not self.M_values or min(self.M_values) < 1 or min(counts) < 1:
            raise InvalidArgumentError("plan counts (grid, M values, replicates, reference M, workers) must be >= 1")
        if len(set(self.M_values)) != len(self.M_values):
            raise InvalidArgumentError(f"M values repeat: {self.M_values}")
        if not 0 < self.delta < 1:
            raise InvalidArgumentError(f"delta must lie in (0, 1), got {self.delta}")
        if any(c < 0 for c in self.coupling_grid + [self.coupling]):
            raise InvalidArgumentError("coupling bounds must be >= 0")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidArgumentError(f"unknown plan keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise InvalidArgumentError(f"malformed plan: {e}") from e

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidArgumentError(f"cannot read plan {path}: {e}") from e
        if not isinstance(data, dict):
            raise InvalidArgumentError(f"plan {path} must hold a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def cell_seed(seed: int, index: int) -> int:
    """Seed of experiment cell `index`, independent of every other cell"""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def plan_model(plan: ExperimentPlan, coupling: float, index: int = 0) -> DiscreteModel:
    """The plan's model file, or a generated spin glass for cell `index`"""
    if plan.model_path:
        return load_model(plan.model_path)
    cfg = SpinGlassConfig(rows=plan.rows, cols=plan.cols, coupling=coupling, seed=plan.seed)
    return generate_spin_glass(cfg, RngStream(plan.seed, MODEL_STREAM).spawn(index))


# ============================================================================
# Experiments
# ============================================================================

@dataclass
class CouplingCell:
    """|sample mean - reference| per replicate (rows) and M (columns) at one coupling bound"""

    c: float
    seed: int
    reference: ReferenceEstimate
    M_values: List[int]
    errors: np.ndarray = field(repr=False)

    def rows(self) -> List[Dict[str, Any]]:
        replicates = self.errors.shape[0]
        out = []
        for col, M in enumerate(self.M_values):
            err = self.errors[:, col]
            out.append({
                "c": self.c,
                "M": M,
                "mean_abs_error": float(err.mean()),
                "std_error": float(err.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else math.nan,
                "replicates": replicates,
                "seed": self.seed,
            })
        return out


def coupling_errors(plan: ExperimentPlan, c: float, index: int) -> CouplingCell:
    """Absolute errors of the M-sample means of V_1 on the instance generated for cell `index`"""
    if plan.model_path:
        raise InvalidArgumentError("error-vs-coupling generates its own instances; drop model_path")
    seed = cell_seed(plan.seed, index)
    model = plan_model(plan, c, index)
    reference, deviations = deviation_experiment(
        model, plan.M_values, plan.replicates, RngStream(seed),
        reference_M=plan.reference_M, solver=plan.solver, workers=plan.workers)
    errors = np.array([[abs(d.value) for d in deviations[M]] for M in plan.M_values]).T
    logger.info(f"[BENCH] c={c:g}: reference E[V_1] = {reference.mean:.4f}, "
                + ", ".join(f"M={M}: {errors[:, k].mean():.4f}" for k, M in enumerate(plan.M_values)))
    return CouplingCell(c=c, seed=seed, reference=reference, M_values=list(plan.M_values), errors=errors)


def _error_frame(rows: List[Dict[str, Any]]) -> pd.DataFrame:
    df = pd.DataFrame(rows, columns=ERROR_COLUMNS)
    return df.sort_values(["c", "M"], kind="mergesort").reset_index(drop=True)


def run_error_vs_coupling(plan: ExperimentPlan, couplings: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Mean absolute error of the M-sample mean of V_1 for every coupling bound c and M"""
    couplings = plan.coupling_grid if couplings is None else [float(c) for c in couplings]
    rows = []
    for index, c in enumerate(couplings):
        rows.extend(coupling_errors(plan, c, index).rows())
    return _error_frame(rows)


def deviation_histogram(
    deviations: Dict[int, Sequence[float]],
    r_grid: Sequence[float],
) -> pd.DataFrame:
    """Number of replicates with |deviation| >= r, per M and r"""
    rows = []
    for M in sorted(deviations):
        values = np.abs(np.asarray(deviations[M], dtype=np.float64))
        for r in r_grid:
            rows.append({"M": M, "r": float(r), "exceed_count": int(np.sum(values >= r)),
                         "replicates": int(values.size)})
    return pd.DataFrame(rows, columns=HISTOGRAM_COLUMNS)


def run_deviation_histogram(plan: ExperimentPlan, r_grid: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """
    Exceed counts of |sample mean - reference| over a grid of r for each M, on
    one instance at coupling bound `plan.coupling`. The default grid spans
    [0, largest observed deviation] in `plan.r_bins` points.
    """
    model = plan_model(plan, plan.coupling)
    seed = cell_seed(plan.seed, 0)
    _, samples = deviation_experiment(
        model, plan.M_values, plan.replicates, RngStream(seed),
        reference_M=plan.reference_M, solver=plan.solver, workers=plan.workers)
    deviations = {M: [s.value for s in samples[M]] for M in plan.M_values}
    if r_grid is None:
        largest = max(abs(v) for values in deviations.values() for v in values)
        r_grid = np.linspace(0.0, largest, plan.r_bins)
    return deviation_histogram(deviations, r_grid)


@dataclass(frozen=True)
class TailFit:
    """Least-squares line log(exceed_count) = intercept + slope * r^2 over the tail"""

    M: int
    slope: float
    intercept: float
    r_squared: float
    points: int


def fit_tail_decay(df: pd.DataFrame, M: int, min_count: int = 3) -> TailFit:
    """
    Fit the tail of one M's survival counts: rows with exceed_count between
    `min_count` and half the replicates.
    """
    rows = df[df["M"] == M]
    if rows.empty:
        raise InvalidArgumentError(f"dataset has no rows for M={M}")
    replicates = int(rows["replicates"].iloc[0])
    tail = rows[(rows["exceed_count"] >= min_count) & (rows["exceed_count"] <= replicates / 2)]
    if len(tail) < 3:
        raise InvalidArgumentError(f"M={M}: only {len(tail)} tail points, need 3")
    x = tail["r"].to_numpy(dtype=np.float64) ** 2
    y = np.log(tail["exceed_count"].to_numpy(dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - float(np.sum(residual ** 2) / spread) if spread > 0 else 1.0
    return TailFit(M=M, slope=float(slope), intercept=float(intercept), r_squared=r_squared, points=len(tail))


# ============================================================================
# Datasets and plots
# ============================================================================

def write_dataset(df: pd.DataFrame, path) -> str:
    """CSV with a version comment line, header row, LF line endings, UTF-8"""
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# {DATASET_VERSION}\n")
        df.to_csv(f, index=False, lineterminator="\n", float_format="%.12g")
    logger.info(f"[EXPORT] Dataset saved to CSV: {output_path}")
    return str(output_path)


def read_dataset(path, required: Sequence[str] = ()) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, comment="#")
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise DatasetParseError(f"cannot parse dataset {path}: {e}") from e
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DatasetParseError(f"dataset {path} lacks columns: {', '.join(missing)}")
    for column in required:
        if not pd.api.types.is_numeric_dtype(df[column]) and not df.empty:
            raise DatasetParseError(f"column '{column}' of {path} is not numeric")
    return df


PLOT_KINDS = {
    # kind: (x column, y column, x label, y label)
    "line": ("c", "mean_abs_error", "coupling bound c", "mean |sample mean - reference|"),
    "histogram": ("r", "exceed_count", "r", "replicates with |deviation| >= r"),
}

SERIES_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def emit_plot(dataset: Union[str, Path, pd.DataFrame], kind: str, output_path) -> str:
    """
    SVG plot of a dataset, one series per M in ascending order. Identical
    input gives identical bytes (fixed canvas, colors, ids and hash salt).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if kind not in PLOT_KINDS:
        raise InvalidArgumentError(f"unknown plot kind '{kind}' (choose from {', '.join(PLOT_KINDS)})")
    x_col, y_col, x_label, y_label = PLOT_KINDS[kind]
    required = ["M", x_col, y_col]
    if isinstance(dataset, pd.DataFrame):
        df = dataset
        missing = [c for c in required if c not in df.columns]
        if missing:
            raise DatasetParseError(f"dataset lacks columns: {', '.join(missing)}")
    else:
        df = read_dataset(dataset, required)

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({
        "svg.hashsalt": "pmap",
        "svg.fonttype": "none",
        "font.family": "DejaVu Sans",
        "axes.unicode_minus": False,
    }):
        fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=72)
        for k, M in enumerate(sorted(df["M"].unique())):
            series = df[df["M"] == M].sort_values(x_col, kind="mergesort")
            (line,) = ax.plot(series[x_col].to_numpy(), series[y_col].to_numpy(),
                              color=SERIES_COLORS[k % len(SERIES_COLORS)], label=f"M={int(M)}")
            line.set_gid(f"series-M{int(M)}")
        ax.set_xlabel(x_label)
        ax.set_ylabel(y_label)
        ax.grid(True, alpha=0.3)
        if not df.empty:
            ax.legend(loc="best")
        fig.savefig(output_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.info(f"[EXPORT] Plot saved to SVG: {output_path}")
    return str(output_path)


# ============================================================================
# Batch runner
# ============================================================================

EXPERIMENTS = ("error-vs-coupling", "deviation-histogram")


class ExperimentRunner:
    """
    Runs an experiment plan cell by cell, exports the dataset and a summary
    report. A failing cell is logged and recorded; the remaining cells still run.
    """

    def __init__(self, plan: ExperimentPlan, output_dir: Optional[str] = None):
        """
        Args:
            plan: Validated experiment plan (instance size, M values, replicates, solver, seed)
            output_dir: Directory for datasets and reports; defaults to plan.output_dir
                and is created if missing
        """
        self.plan = plan
        self.output_dir = Path(output_dir or plan.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.processing_log: List[Dict[str, Any]] = []

    def run(self, experiment: str) -> pd.DataFrame:
        """
        Run every cell of one experiment and collect the rows of the cells that succeed.

        error-vs-coupling has one cell per coupling bound in plan.coupling_grid;
        deviation-histogram is a single cell at plan.coupling. The processing log
        is reset on every call.

        Args:
            experiment: "error-vs-coupling" or "deviation-histogram"

        Returns:
            DataFrame with ERROR_COLUMNS or HISTOGRAM_COLUMNS; empty when every cell failed

        Raises:
            InvalidArgumentError: If the experiment name is unknown
        """
        if experiment not in EXPERIMENTS:
            raise InvalidArgumentError(f"unknown experiment '{experiment}' (choose from {', '.join(EXPERIMENTS)})")
        logger.info(f"[BENCH] Starting {experiment}: {self.plan.rows}x{self.plan.cols}, "
                    f"M={self.plan.M_values}, replicates={self.plan.replicates}, seed={self.plan.seed}")
        self.processing_log = []
        if experiment == "deviation-histogram":
            return self._run_cell({"c": self.plan.coupling}, lambda: run_deviation_histogram(self.plan),
                                  HISTOGRAM_COLUMNS)

        frames = [
            self._run_cell({"c": c}, lambda c=c, k=k: pd.DataFrame(coupling_errors(self.plan, c, k).rows()),
                           ERROR_COLUMNS)
            for k, c in enumerate(self.plan.coupling_grid)
        ]
        rows = [row for frame in frames for row in frame.to_dict("records")]
        return _error_frame(rows)

    def _run_cell(self, cell: Dict[str, Any], job, columns: List[str]) -> pd.DataFrame:
        try:
            df = job()
            self.processing_log.append({**cell, "status": "success", "error": None, "rows": len(df)})
            return df
        except PMapError as e:
            logger.error(f"[BENCH] cell {cell} failed: {e}")
            self.processing_log.append({**cell, "status": "failed", "error": str(e), "rows": 0})
            return pd.DataFrame(columns=columns)

    def export_dataset(self, df: pd.DataFrame, experiment: str, filename: Optional[str] = None) -> str:
        """
        Args:
            df: Rows returned by run()
            experiment: Experiment name, used for the default file name <experiment>.csv
            filename: Optional file name inside the output directory

        Returns:
            Path of the written CSV
        """
        return write_dataset(df, self.output_dir / (filename or f"{experiment}.csv"))

    def generate_summary_report(self, experiment: str, df: pd.DataFrame) -> Dict[str, Any]:
        """
        Summarize the last run: cell counts, failures and per-M statistics.

        Args:
            experiment: Name of the experiment that produced `df`
            df: Rows returned by run()

        Returns:
            JSON-ready dictionary. Error runs add mean_abs_error_by_M; histogram
            runs add tail_fits, one TailFit (or the fit error) per M
        """
        successful = [c for c in self.processing_log if c["status"] == "success"]
        failed = [c for c in self.processing_log if c["status"] == "failed"]
        report: Dict[str, Any] = {
            "timestamp": datetime.now().isoformat(),
            "experiment": experiment,
            "plan": self.plan.to_dict(),
            "total_cells": len(self.processing_log),
            "successful": len(successful),
            "failed": len(failed),
            "success_rate": (f"{len(successful) / len(self.processing_log) * 100:.1f}%"
                             if self.processing_log else "N/A"),
            "rows": len(df),
            "failed_cells": [{"c": c["c"], "error": c["error"]} for c in failed],
        }
        if experiment == "deviation-histogram" and not df.empty:
            fits = {}
            for M in sorted(df["M"].unique()):
                try:
                    fits[str(int(M))] = asdict(fit_tail_decay(df, int(M)))
                except InvalidArgumentError as e:
                    fits[str(int(M))] = {"error": str(e)}
            report["tail_fits"] = fits
        elif experiment == "error-vs-coupling" and not df.empty:
            report["mean_abs_error_by_M"] = {
                str(int(M)): float(g["mean_abs_error"].mean()) for M, g in df.groupby("M")}
        return report

    def save_report(self, report: Dict[str, Any], filename: Optional[str] = None) -> str:
        """
        Write a summary report as JSON next to the dataset.

        Args:
            report: Dictionary from generate_summary_report()
            filename: File name inside the output directory; defaults to
                <experiment>_report.json so a rerun replaces the previous report

        Returns:
            Path of the written report
        """
        path = self.output_dir / (filename or f"{report['experiment']}_report.json")
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"[REPORT] {report['experiment']} report written to {path}")
        return str(path)

    def print_report(self, report: Dict[str, Any]) -> None:
        """Pretty print the summary report"""
        print(f"\n{'=' * 80}")
        print(f"EXPERIMENT SUMMARY: {report.get('experiment', 'N/A')}")
        print(f"{'=' * 80}")
        print(f"Timestamp: {report.get('timestamp', 'N/A')}")
        print(f"Cells: {report.get('total_cells', 0)} "
              f"(successful {report.get('successful', 0)}, failed {report.get('failed', 0)}, "
              f"rate {report.get('success_rate', 'N/A')})")
        print(f"Rows: {report.get('rows', 0)}")
        for M, value in report.get("mean_abs_error_by_M", {}).items():
            print(f"  M={M:>6s}: mean |error| {value:.5f}")
        for M, fit in report.get("tail_fits", {}).items():
            if "error" in fit:
                print(f"  M={M:>6s}: {fit['error']}")
            else:
                print(f"  M={M:>6s}: slope {fit['slope']:.4f}, R^2 {fit['r_squared']:.3f} ({fit['points']} points)")
        for cell in report.get("failed_cells", []):
            print(f"  failed c={cell['c']}: {cell['error']}")
        print(f"{'=' * 80}\n")


def run_and_export(plan: ExperimentPlan, experiment: str, save_report: bool = True) -> Dict[str, str]:
    """
    Run one experiment, write its dataset and print the summary.

    Args:
        plan: Experiment plan; plan.output_dir receives the files
        experiment: "error-vs-coupling" or "deviation-histogram"
        save_report: Also write <experiment>_report.json

    Returns:
        {"csv": dataset path} plus {"report": report path} when save_report is set
    """
    runner = ExperimentRunner(plan)
    df = runner.run(experiment)
    output_files = {"csv": runner.export_dataset(df, experiment)}
    report = runner.generate_summary_report(experiment, df)
    runner.print_report(report)
    if save_report:
        output_files["report"] = runner.save_report(report)
    return output_files
