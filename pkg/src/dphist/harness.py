"""Config-driven Monte-Carlo experiment runner.

Each trial derives its own random stream from (seed, trial index), draws
one measurement set, feeds that same set to every postprocessing
algorithm (paired-noise design), and records each workload query's
squared error.  Per-query expected squared errors are averaged over
trials and aggregated to Total / Max metrics with standard errors.
Trials whose fitter failed to converge are excluded for that algorithm
only, with ``trials_used`` recording what remains.

Aggregation sums fixed-order per-trial accumulators, so reports are
byte-identical for a given config regardless of worker count.
"""

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .benchdata import DatasetSpec, generate, parse_dataset
from .core import Histogram, Workload, identity_group, standard_workload
from .mechanisms import PrivacyBudget, calibrate, clamp_mechanism, measure, trial_rng
from .postprocess import FITTERS, MECHANISM_ALGORITHMS, REGISTRY_NAMES
from .solvers import DEFAULT_SETTINGS, SolverSettings


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    workload: str
    budget: PrivacyBudget
    algorithms: tuple
    trials: int = 1000
    seed: int = 0
    gamma: float = 0.99
    solver: SolverSettings = DEFAULT_SETTINGS

    def __post_init__(self):
        if self.workload not in ("1d", "2d"):
            raise ConfigError(f"workload must be 1d or 2d, got {self.workload!r}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.algorithms:
            raise ConfigError("no algorithms requested")
        for name in self.algorithms:
            if name not in REGISTRY_NAMES:
                raise ConfigError(
                    f"unknown algorithm {name!r}; known: {REGISTRY_NAMES}")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must be in (0, 1)")
        dims = 1 if self.workload == "1d" else 2
        if self.dataset.family != "file" and self.dataset.dims != dims:
            raise ConfigError("dataset dims do not match workload")


_CONFIG_KEYS = ("dataset", "workload", "budget_kind", "budget_eps",
                "budget_rho", "budget_delta", "algorithms", "trials",
                "seed", "gamma", "solver_abs_tol", "solver_rel_tol",
                "solver_max_iters", "solver_eq_slack", "solver_linf_slack",
                "dataset_shape")


def parse_config(text):
    """Parse flat key = value experiment config text."""
    pairs = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        pairs[key] = value
    try:
        workload = pairs.get("workload", "1d")
        dims = 1 if workload == "1d" else 2
        dataset = parse_dataset(pairs["dataset"], dims=dims)
        if "dataset_shape" in pairs:
            shape = tuple(int(s) for s in pairs["dataset_shape"].split("x"))
            dataset = DatasetSpec(dataset.family, k=dataset.k, dims=dims,
                                  path=dataset.path, shape=shape)
        kind = pairs["budget_kind"]
        if kind == "pure":
            budget = PrivacyBudget.pure(float(pairs["budget_eps"]))
        elif kind == "zcdp":
            budget = PrivacyBudget.zcdp(float(pairs["budget_rho"]))
        elif kind == "approx":
            budget = PrivacyBudget.approx(float(pairs["budget_eps"]),
                                          float(pairs["budget_delta"]))
        else:
            raise ConfigError(f"unknown budget_kind {kind!r}")
        solver = SolverSettings(
            abs_tol=float(pairs.get("solver_abs_tol", DEFAULT_SETTINGS.abs_tol)),
            rel_tol=float(pairs.get("solver_rel_tol", DEFAULT_SETTINGS.rel_tol)),
            max_iters=int(pairs.get("solver_max_iters", DEFAULT_SETTINGS.max_iters)),
            eq_slack=float(pairs.get("solver_eq_slack", DEFAULT_SETTINGS.eq_slack)),
            linf_slack=float(pairs.get("solver_linf_slack",
                                       DEFAULT_SETTINGS.linf_slack)))
        return ExperimentConfig(
            dataset=dataset,
            workload=workload,
            budget=budget,
            algorithms=tuple(a.strip() for a in pairs["algorithms"].split(",")
                             if a.strip()),
            trials=int(pairs.get("trials", 1000)),
            seed=int(pairs.get("seed", 0)),
            gamma=float(pairs.get("gamma", 0.99)),
            solver=solver)
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc.args[0]!r}") from None
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    mechanism: str
    budget: str
    algorithm: str
    query_group: str
    metric: str
    value: float
    stderr: float
    trials_used: int


@dataclass(frozen=True)
class ErrorReport:
    rows: tuple

    def value(self, algorithm, query_group, metric):
        for row in self.rows:
            if (row.algorithm == algorithm and row.query_group == query_group
                    and row.metric == metric):
                return row
        raise KeyError((algorithm, query_group, metric))

    def algorithms(self):
        seen = []
        for row in self.rows:
            if row.algorithm not in seen:
                seen.append(row.algorithm)
        return seen


def summarize_stderr(per_trial_sq_errors):
    """Standard errors for one group's (trials x queries) squared errors.

    Total uses the sample std of per-trial totals; Max uses the std of
    the per-trial errors of the query attaining the max mean error.
    """
    arr = np.asarray(per_trial_sq_errors, dtype=float)
    trials = arr.shape[0]
    if trials < 2:
        raise ValueError("standard errors need at least 2 trials")
    totals = arr.sum(axis=1)
    stderr_total = float(totals.std(ddof=1) / math.sqrt(trials))
    worst = int(np.argmax(arr.mean(axis=0)))
    stderr_max = float(arr[:, worst].std(ddof=1) / math.sqrt(trials))
    return stderr_total, stderr_max


@dataclass
class _TrialContext:
    cells: np.ndarray
    shape: tuple
    workload: Workload
    budget: PrivacyBudget
    algorithms: tuple
    gamma: float
    solver: SolverSettings
    seed: int
    query_matrix: np.ndarray = field(default=None)
    true_answers: np.ndarray = field(default=None)

    def finalize(self):
        mats = [g.indicator_matrix for g in self.workload.groups]
        self.query_matrix = np.vstack(mats)
        self.true_answers = self.query_matrix @ self.cells
        return self


def _run_trial(ctx, trial):
    rng = trial_rng(ctx.seed, trial)
    m = measure(_hist_of(ctx), ctx.workload, rng)
    out = {}
    for name in ctx.algorithms:
        if name in MECHANISM_ALGORITHMS:
            fitted = clamp_mechanism(_hist_of(ctx), ctx.budget, rng)
            answers = ctx.query_matrix @ fitted.cells
            out[name] = ((answers - ctx.true_answers) ** 2, True)
        else:
            result = FITTERS[name](m, ctx.gamma, ctx.solver)
            answers = ctx.query_matrix @ result.values
            out[name] = ((answers - ctx.true_answers) ** 2, result.converged)
    return trial, out


def _hist_of(ctx):
    return Histogram(ctx.cells, ctx.shape)


def _run_trial_star(args):
    return _run_trial(*args)


def run(config, threads=1):
    """Execute the Monte-Carlo experiment described by ``config``."""
    hist = generate(config.dataset)
    dims = 1 if config.workload == "1d" else 2
    if hist.ndim != dims:
        raise ConfigError(
            f"dataset has {hist.ndim} dimension(s), workload wants {dims}")
    workload = calibrate(config.budget, standard_workload(hist.shape))
    if "simplex" in config.algorithms and config.workload != "1d":
        raise ConfigError("simplex fitting needs the 1d sum+identity workload")
    if "clamp" in config.algorithms and config.budget.kind == "approx":
        raise ConfigError("clamp mechanism supports pure DP and zCDP only")
    ctx = _TrialContext(
        cells=hist.cells, shape=hist.shape, workload=workload,
        budget=config.budget, algorithms=config.algorithms,
        gamma=config.gamma, solver=config.solver, seed=config.seed,
    ).finalize()

    n_queries = ctx.query_matrix.shape[0]
    errors = {a: np.zeros((config.trials, n_queries)) for a in config.algorithms}
    converged = {a: np.zeros(config.trials, dtype=bool)
                 for a in config.algorithms}

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            args = [(ctx, t) for t in range(config.trials)]
            results = pool.map(_run_trial_star, args,
                               chunksize=max(1, config.trials // (8 * threads)))
            for trial, out in results:
                for name, (sq, ok) in out.items():
                    errors[name][trial] = sq
                    converged[name][trial] = ok
    else:
        for t in range(config.trials):
            trial, out = _run_trial(ctx, t)
            for name, (sq, ok) in out.items():
                errors[name][trial] = sq
                converged[name][trial] = ok

    mechanism = config.budget.mechanism_label
    budget_label = config.budget.label()
    dataset_label = config.dataset.label
    rows = []
    offsets = {}
    pos = 0
    for g in workload.groups:
        offsets[g.name] = slice(pos, pos + len(g))
        pos += len(g)
    for name in config.algorithms:
        used = converged[name]
        trials_used = int(used.sum())
        for g in workload.groups:
            sl = offsets[g.name]
            if trials_used == 0:
                total = mx = st_total = st_max = math.nan
            else:
                block = errors[name][used][:, sl]
                e = block.mean(axis=0)
                total = float(e.sum())
                mx = float(e.max())
                if trials_used >= 2:
                    st_total, st_max = summarize_stderr(block)
                else:
                    st_total = st_max = math.nan
            rows.append(ReportRow(dataset_label, mechanism, budget_label,
                                  name, g.name, "total", total, st_total,
                                  trials_used))
            rows.append(ReportRow(dataset_label, mechanism, budget_label,
                                  name, g.name, "max", mx, st_max,
                                  trials_used))
    return ErrorReport(tuple(rows))


CSV_HEADER = ("dataset,mechanism,budget,algorithm,query_group,metric,"
              "value,stderr,trials_used")


def emit_table(report, format="csv"):
    """Render a report as csv (lossless) or a paper-style md table."""
    if format == "csv":
        lines = [CSV_HEADER]
        for r in report.rows:
            lines.append(",".join([
                r.dataset, r.mechanism, r.budget, r.algorithm,
                r.query_group, r.metric, repr(r.value), repr(r.stderr),
                str(r.trials_used)]))
        return "\n".join(lines) + "\n"
    if format == "md":
        return _emit_md(report)
    raise ValueError(f"unknown format {format!r}")


def _emit_md(report):
    blocks = {}
    for r in report.rows:
        key = (r.dataset, r.mechanism, r.budget, r.query_group)
        blocks.setdefault(key, {}).setdefault(r.algorithm, {})[r.metric] = r
    out = io.StringIO()
    for (dataset, mechanism, budget, group), algs in blocks.items():
        out.write(f"### {group} queries. {dataset}. "
                  f"{mechanism} ({budget})\n\n")
        out.write("| algorithm | Total | +- | Max | +- | trials |\n")
        out.write("|---|---|---|---|---|---|\n")
        for alg, metrics in algs.items():
            t = metrics.get("total")
            m = metrics.get("max")
            out.write(
                f"| {alg} | {t.value:.1f} | {t.stderr:.1f} "
                f"| {m.value:.1f} | {m.stderr:.1f} | {t.trials_used} |\n")
        out.write("\n")
    return out.getvalue()


def parse_report(text):
    """Inverse of ``emit_table(..., 'csv')``; values round-trip exactly."""
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("not a report csv (bad header)")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 9:
            raise ValueError(f"bad report line: {line!r}")
        rows.append(ReportRow(parts[0], parts[1], parts[2], parts[3],
                              parts[4], parts[5], float(parts[6]),
                              float(parts[7]), int(parts[8])))
    return ErrorReport(tuple(rows))


@dataclass(frozen=True)
class UncertaintyRow:
    algorithm: str
    point_mse_max: float   # C^2: worst per-cell expected squared error
    sum_mse: float          # D^2: expected squared error of the total


@dataclass(frozen=True)
class UncertaintySummary:
    d: int
    eps: float
    trials: int
    baseline: float         # per-query MSE of plain (non-microdata) noise
    rows: tuple

    def row(self, algorithm):
        for r in self.rows:
            if r.algorithm == algorithm:
                return r
        raise KeyError(algorithm)


def uncertainty_demo(d, eps, trials=1000, seed=0):
    """Empirical face of the microdata accuracy tradeoff.

    On the difficult dataset (one hot cell near log(d)/eps), measures
    C^2 = max per-cell MSE and D^2 = total MSE for three nonnegative
    outputs: the water-filling fit (sum-accurate), plain NNLS on
    identity-only measurements, and the per-cell clamp mechanism (both
    point-accurate).  The Laplace baseline 8/eps^2 is what unconstrained
    noisy answers would give every query.
    """
    from .postprocess import fit_nnls, fit_simplex

    if d < 2:
        raise ConfigError("need at least 2 cells")
    hist = generate(DatasetSpec("difficult", d=int(d), eps=float(eps)))
    budget = PrivacyBudget.pure(eps)
    wl_full = calibrate(budget, standard_workload(hist.shape))
    wl_id = calibrate(budget, Workload([identity_group(hist.size)]))

    variants = ("simplex", "nnls_id", "clamp")
    cell_sq = {v: np.zeros((trials, hist.size)) for v in variants}
    sum_sq = {v: np.zeros(trials) for v in variants}
    for t in range(trials):
        rng = trial_rng(seed, t)
        m_full = measure(hist, wl_full, rng)
        m_id = measure(hist, wl_id, rng)
        clamped = clamp_mechanism(hist, budget, rng)
        fits = {
            "simplex": fit_simplex(m_full).values,
            "nnls_id": fit_nnls(m_id).values,
            "clamp": clamped.cells,
        }
        for v, x in fits.items():
            cell_sq[v][t] = (x - hist.cells) ** 2
            sum_sq[v][t] = (x.sum() - hist.total()) ** 2
    rows = tuple(
        UncertaintyRow(v, float(cell_sq[v].mean(axis=0).max()),
                       float(sum_sq[v].mean()))
        for v in variants)
    return UncertaintySummary(int(d), float(eps), int(trials),
                              8.0 / eps ** 2, rows)


def render_uncertainty(summary):
    lines = [
        f"difficult dataset: d={summary.d}, eps={summary.eps:g}, "
        f"{summary.trials} trials",
        f"baseline per-query MSE (plain noisy answers): "
        f"{summary.baseline:.3f}",
        "algorithm  C2=max point MSE  D2=sum MSE",
    ]
    for r in summary.rows:
        lines.append(f"{r.algorithm:10s} {r.point_mse_max:15.3f} "
                     f"{r.sum_mse:11.3f}")
    return "\n".join(lines) + "\n"
