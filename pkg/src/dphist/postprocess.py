"""Fitters that turn a measurement set into a nonnegative weighted
histogram.

All fitters consume only the noisy answers and their noise specs.  The
baselines are plain weighted least squares (``ols``, the one result that
may go negative) and nonnegative least squares (``nnls``).  ``max``
first minimizes the worst normalized deviation and then least-squares
refits under that cap.  ``seq`` fits query groups in priority order,
pinning each stage to the previous stage's fitted answers.  ``weight``
reweights queries whose answers are indistinguishable from zero noise
and adds their estimated group total as a single aggregate term.
``simplex`` is the closed-form water-filling fit for a sum + identity
measurement set.
"""

import math

import numpy as np
from dataclasses import dataclass

from .core import Histogram
from .solvers import (
    DEFAULT_SETTINGS,
    QuadraticFitProblem,
    max_exceed_prob,
    max_order_quantile,
    simplex_water_fill,
    solve_minmax,
    solve_nnls,
    solve_wls,
)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted cell weights plus convergence and per-stage diagnostics.

    ``microdata`` is False only for the OLS baseline, whose weights may
    be negative and therefore do not form a valid weighted dataset.
    """

    values: np.ndarray
    converged: bool
    microdata: bool
    stage_diagnostics: tuple = ()

    def histogram(self, shape=None):
        return Histogram(self.values, shape)

    def query_value(self, query):
        return float(query.indicator @ self.values)


def _weighted_terms(measurements):
    terms = []
    for g, q, value in measurements.entries():
        terms.append((q.indicator, value, 1.0 / g.noise.variance))
    return terms


def fit_ols(measurements, settings=DEFAULT_SETTINGS):
    """Weighted least squares over all measurements, no nonnegativity."""
    problem = QuadraticFitProblem.from_terms(
        _weighted_terms(measurements), nonneg=False)
    res = solve_wls(problem)
    diag = (("wls", res.objective),)
    if res.rank_deficient:
        diag += (("rank_deficient", 1.0),)
    return FitResult(res.x, converged=True, microdata=False,
                     stage_diagnostics=diag)


def fit_nnls(measurements, settings=DEFAULT_SETTINGS):
    """Weighted nonnegative least squares over all measurements."""
    problem = QuadraticFitProblem.from_terms(_weighted_terms(measurements))
    res = solve_nnls(problem, settings)
    return FitResult(res.x, converged=res.converged, microdata=True,
                     stage_diagnostics=(("nnls", res.objective),))


def fit_max(measurements, settings=DEFAULT_SETTINGS):
    """Min-max fitting: minimize the worst normalized deviation, then
    least-squares refit with every deviation capped at that distance
    plus ``linf_slack``."""
    terms = _weighted_terms(measurements)
    base = QuadraticFitProblem.from_terms(terms)
    dist, stage1 = solve_minmax(base, settings)
    caps = []
    for g, q, value in measurements.entries():
        caps.append((q.indicator, value, dist + settings.linf_slack,
                     g.noise.std))
    capped = QuadraticFitProblem.from_terms(terms, linf_caps=caps)
    stage2 = solve_nnls(capped, settings)
    return FitResult(stage2.x,
                     converged=stage1.converged and stage2.converged,
                     microdata=True,
                     stage_diagnostics=(("minmax_dist", dist),
                                        ("capped_nnls", stage2.objective)))


def fit_sequential(measurements, priority=None, settings=DEFAULT_SETTINGS):
    """Fit query groups in priority order.

    Stage l minimizes the weighted squared error of its own group subject
    to nonnegativity and to matching every previously fitted query value
    (within ``eq_slack``).  Once the accumulated equalities fully
    determine the cell vector, the remaining stages are no-ops.
    """
    wl = measurements.workload
    names = list(priority) if priority is not None else wl.group_names
    if sorted(names) != sorted(wl.group_names):
        raise ValueError("priority must cover every group exactly once")
    n = measurements.n_cells
    x = np.zeros(n)
    eq_rows = []
    converged = True
    diags = []
    determined = False
    for name in names:
        if determined or (eq_rows and
                          np.linalg.matrix_rank(np.vstack(eq_rows)) >= n):
            determined = True
            diags.append((name, math.nan))
            continue
        group = wl.group(name)
        answers = measurements.group_answers(name)
        var = group.noise.variance
        terms = [(q.indicator, a, 1.0 / var)
                 for q, a in zip(group.queries, answers)]
        equalities = [(row, float(row @ x), settings.eq_slack)
                      for row in eq_rows]
        problem = QuadraticFitProblem.from_terms(terms, equalities=equalities)
        res = solve_nnls(problem, settings)
        x = res.x
        converged = converged and res.converged
        diags.append((name, res.objective))
        eq_rows.extend(q.indicator for q in group.queries)
    return FitResult(x, converged=converged, microdata=True,
                     stage_diagnostics=tuple(diags))


@dataclass(frozen=True, eq=False)
class GroupReweightPlan:
    group: str
    cutoff: float
    j_low: int
    downweight: float
    low_ids: tuple
    aggregate_indicator: np.ndarray
    aggregate_target: float


@dataclass(frozen=True, eq=False)
class ReweightPlan:
    groups: tuple

    def for_group(self, name):
        for g in self.groups:
            if g.group == name:
                return g
        raise KeyError(f"no plan for group {name!r}")


def plan_reweight(measurements, gamma=0.99):
    """Classify each group's queries as high or low for reweighted
    fitting.

    Per group: sort the noisy answers ascending (ties broken by query
    id), find the smallest rank j whose answer could not plausibly be
    reached by the maximum of j fresh noise draws (exceedance probability
    at most 1-gamma), and cut there.  Queries strictly below the cutoff
    are "low": their answers look like pure noise.  The downweight is the
    median of the maximum of ``max(j_low, 1)`` fresh draws, floored at
    the noise standard deviation.  When no rank qualifies, the whole
    group is low.
    """
    if not 0 < gamma < 1:
        raise ValueError("confidence gamma must be in (0, 1)")
    plans = []
    for group, answers in zip(measurements.workload.groups,
                              measurements.answers):
        spec = group.noise
        order = sorted(range(len(group)),
                       key=lambda i: (answers[i], group.queries[i].id))
        cutoff = math.inf
        for rank, idx in enumerate(order, start=1):
            if max_exceed_prob(spec, rank, answers[idx]) <= 1.0 - gamma:
                cutoff = float(answers[idx])
                break
        low_mask = answers < cutoff
        j_low = int(low_mask.sum())
        downweight = max(
            max_order_quantile(spec, max(j_low, 1), 0.5), spec.std)
        if j_low:
            agg = np.zeros(group.n_cells)
            for q, low in zip(group.queries, low_mask):
                if low:
                    agg += q.indicator
            target = float(answers[low_mask].sum())
        else:
            agg = np.zeros(group.n_cells)
            target = 0.0
        plans.append(GroupReweightPlan(
            group=group.name, cutoff=cutoff, j_low=j_low,
            downweight=float(downweight),
            low_ids=tuple(q.id for q, low in zip(group.queries, low_mask)
                          if low),
            aggregate_indicator=agg, aggregate_target=target))
    return ReweightPlan(tuple(plans))


def fit_reweighted(measurements, gamma=0.99, settings=DEFAULT_SETTINGS):
    """Nonnegative least squares with plan-based weights.

    High queries keep the plain 1/variance weight.  Low queries are
    downweighted to 1/(2 variance downweight^2) and their group gains one
    aggregate term (sum of low queries vs. sum of their noisy answers)
    with weight 1/(2 j_low variance); the halving avoids double counting.
    Groups with no low queries contribute no aggregate term.
    """
    plan = plan_reweight(measurements, gamma)
    terms = []
    for group, answers, gplan in zip(measurements.workload.groups,
                                     measurements.answers, plan.groups):
        var = group.noise.variance
        low = set(gplan.low_ids)
        dw2 = gplan.downweight ** 2
        for q, a in zip(group.queries, answers):
            if q.id in low:
                terms.append((q.indicator, a, 1.0 / (2.0 * var * dw2)))
            else:
                terms.append((q.indicator, a, 1.0 / var))
        if gplan.j_low:
            terms.append((gplan.aggregate_indicator, gplan.aggregate_target,
                          1.0 / (2.0 * gplan.j_low * var)))
    problem = QuadraticFitProblem.from_terms(terms)
    res = solve_nnls(problem, settings)
    return FitResult(res.x, converged=res.converged, microdata=True,
                     stage_diagnostics=(("reweighted_nnls", res.objective),))


def fit_simplex(measurements, settings=DEFAULT_SETTINGS):
    """Water-filling fit for a sum + identity measurement set.

    The identity answers are projected onto the simplex of nonnegative
    vectors totalling ``max(0, sum answer)``; this is the closed-form
    optimum, so no iterative solver is involved.
    """
    wl = measurements.workload
    if sorted(wl.group_names) != ["identity", "sum"]:
        raise ValueError(
            "simplex fitting needs exactly the sum and identity groups")
    sum_group = wl.group("sum")
    if len(sum_group) != 1 or sum_group.queries[0].indicator.min() != 1:
        raise ValueError("missing total-count (sum) measurement")
    a_star = float(measurements.group_answers("sum")[0])
    id_group = wl.group("identity")
    n = measurements.n_cells
    if len(id_group) != n:
        raise ValueError("identity group must cover every cell")
    aligned = np.empty(n)
    for q, a in zip(id_group.queries, measurements.group_answers("identity")):
        cell = int(np.argmax(q.indicator))
        aligned[cell] = a
    x = simplex_water_fill(aligned, max(0.0, a_star))
    gap = float(abs(x.sum() - max(0.0, a_star)))
    return FitResult(x, converged=True, microdata=True,
                     stage_diagnostics=(("water_fill_gap", gap),))


# Registry used by config files and report columns.  ``clamp`` is the
# direct per-cell mechanism; it needs the true histogram and budget
# rather than a measurement set, so the harness dispatches it specially.
FITTERS = {
    "ols": lambda m, gamma, settings: fit_ols(m, settings),
    "nnls": lambda m, gamma, settings: fit_nnls(m, settings),
    "max": lambda m, gamma, settings: fit_max(m, settings),
    "seq": lambda m, gamma, settings: fit_sequential(m, settings=settings),
    "weight": lambda m, gamma, settings: fit_reweighted(m, gamma, settings),
    "simplex": lambda m, gamma, settings: fit_simplex(m, settings),
}

MECHANISM_ALGORITHMS = ("clamp",)

REGISTRY_NAMES = tuple(FITTERS) + MECHANISM_ALGORITHMS
