"""Optimization and order-statistics kernels used by every fitter.

The quadratic solver minimizes a weighted sum of squared query residuals
over the nonnegative orthant, optionally subject to equality constraints
relaxed to a +/- slack band and to two-sided L-infinity caps.  The
algorithm is projected gradient with Nesterov acceleration (plus
quadratic-penalty continuation for the constraints) followed by an exact
active-set polish that solves the KKT system on the identified face.

Also here: the closed-form water-filling solution for least squares over
a scaled simplex, a bisection solver for the min-max normalized
deviation problem, and exceedance/quantile functions for the maximum of
i.i.d. noise draws.
"""

import math

import numpy as np
from dataclasses import dataclass


class InfeasibleProblemError(ValueError):
    """The constraint set admits no nonnegative solution within slack."""


@dataclass(frozen=True)
class SolverSettings:
    abs_tol: float = 1e-7
    rel_tol: float = 1e-7
    max_iters: int = 20000
    eq_slack: float = 1e-3
    linf_slack: float = 1e-2

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.eq_slack < 0 or self.linf_slack < 0:
            raise ValueError("slacks must be nonnegative")


DEFAULT_SETTINGS = SolverSettings()


@dataclass(frozen=True, eq=False)
class QuadraticFitProblem:
    """Weighted least-squares terms with optional constraints.

    ``matrix`` stacks one query indicator per term row; ``targets`` and
    ``weights`` are the per-term noisy answers and (positive) weights.
    Equalities are (row, rhs, slack) triples enforced within +/- slack;
    caps are (row, center, cap, std) with |row . x - center| <= cap*std.
    """

    matrix: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    nonneg: bool = True
    eq_matrix: np.ndarray = None
    eq_rhs: np.ndarray = None
    eq_slacks: np.ndarray = None
    cap_matrix: np.ndarray = None
    cap_centers: np.ndarray = None
    cap_halfwidths: np.ndarray = None

    @classmethod
    def from_terms(cls, terms, nonneg=True, equalities=(), linf_caps=()):
        rows, targets, weights = [], [], []
        for ind, tgt, wt in terms:
            rows.append(np.asarray(ind, dtype=float).ravel())
            targets.append(float(tgt))
            weights.append(float(wt))
        if not rows:
            raise ValueError("problem has no terms")
        matrix = np.vstack(rows)
        weights = np.asarray(weights)
        if (weights <= 0).any():
            raise ValueError("term weights must be strictly positive")
        eq_m = eq_r = eq_s = None
        if equalities:
            eq_m = np.vstack([np.asarray(e[0], float).ravel() for e in equalities])
            eq_r = np.array([float(e[1]) for e in equalities])
            eq_s = np.array([float(e[2]) for e in equalities])
            if (eq_s < 0).any():
                raise ValueError("equality slack must be nonnegative")
            if eq_m.shape[1] != matrix.shape[1]:
                raise ValueError("equality row dimension mismatch")
        cap_m = cap_c = cap_h = None
        if linf_caps:
            cap_m = np.vstack([np.asarray(c[0], float).ravel() for c in linf_caps])
            cap_c = np.array([float(c[1]) for c in linf_caps])
            cap_h = np.array([float(c[2]) * float(c[3]) for c in linf_caps])
            if (cap_h < 0).any():
                raise ValueError("cap halfwidth must be nonnegative")
            if cap_m.shape[1] != matrix.shape[1]:
                raise ValueError("cap row dimension mismatch")
        return cls(matrix, np.asarray(targets), weights, nonneg,
                   eq_m, eq_r, eq_s, cap_m, cap_c, cap_h)

    @property
    def n_vars(self):
        return self.matrix.shape[1]

    @property
    def has_constraints(self):
        return self.eq_matrix is not None or self.cap_matrix is not None

    def ranges(self):
        """Constraints as (rows, lo, hi) band form; None when absent."""
        parts_m, parts_lo, parts_hi = [], [], []
        if self.eq_matrix is not None:
            parts_m.append(self.eq_matrix)
            parts_lo.append(self.eq_rhs - self.eq_slacks)
            parts_hi.append(self.eq_rhs + self.eq_slacks)
        if self.cap_matrix is not None:
            parts_m.append(self.cap_matrix)
            parts_lo.append(self.cap_centers - self.cap_halfwidths)
            parts_hi.append(self.cap_centers + self.cap_halfwidths)
        if not parts_m:
            return None
        return np.vstack(parts_m), np.concatenate(parts_lo), np.concatenate(parts_hi)

    def objective(self, x):
        r = self.matrix @ x - self.targets
        return float(self.weights @ (r * r))


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    converged: bool
    iterations: int
    objective: float
    rank_deficient: bool = False
    max_violation: float = 0.0
    message: str = ""


def solve_wls(problem):
    """Unconstrained weighted least squares via damped normal equations.

    Rank-deficient systems get the minimum-norm completion on the
    unconstrained directions (damping 1e-10) and are flagged.
    """
    if problem.nonneg or problem.has_constraints:
        raise ValueError("solve_wls expects nonneg=False and no constraints")
    A, a, w = problem.matrix, problem.targets, problem.weights
    n = A.shape[1]
    G = A.T @ (w[:, None] * A)
    h = A.T @ (w * a)
    x = np.linalg.solve(G + 1e-10 * np.eye(n), h)
    rank = np.linalg.matrix_rank(A)
    return SolveResult(x=x, converged=True, iterations=0,
                       objective=problem.objective(x),
                       rank_deficient=rank < n)


# ---------------------------------------------------------------------------
# Nonnegative least squares with optional band constraints

def _fista(G, h, ranges, mu, x0, iters, pg_tol):
    """Projected gradient with Nesterov acceleration on the penalized
    objective; gradient of the data part is G x - h."""
    lip = np.abs(G).sum(axis=1).max()
    if ranges is not None and mu > 0:
        R = ranges[0]
        lip += 2.0 * mu * np.abs(R.T @ R).sum(axis=1).max()
    lip = max(lip, 1e-12)
    x = np.maximum(x0, 0.0)
    y = x.copy()
    t = 1.0
    used = 0
    for it in range(iters):
        g = G @ y - h
        if ranges is not None and mu > 0:
            R, lo, hi = ranges
            v = R @ y
            push = np.maximum(v - hi, 0.0) + np.minimum(v - lo, 0.0)
            g = g + (2.0 * mu) * (R.T @ push)
        x_new = np.maximum(y - g / lip, 0.0)
        used = it + 1
        if np.dot(g, x_new - x) > 0:
            t = 1.0
            y = x_new
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        step = np.abs(x_new - x).max()
        x = x_new
        if step <= pg_tol:
            break
    return x, used


def _kkt_polish(G, h, ranges, x, settings, max_rounds=200):
    """Exact active-set refinement.

    Solves the KKT system on the current face (zero variables fixed,
    active band boundaries as equalities), then pivots one violated
    primal or dual condition at a time.  Returns (x, nu, active_info,
    converged, rounds).
    """
    n = x.size
    dual_tol = 0.5 * settings.abs_tol
    scale = 1.0 + np.abs(x).max(initial=0.0)
    if ranges is not None:
        Rm, lo, hi = ranges
        r_count = Rm.shape[0]
        band_tol = np.maximum(1e-9 * (1.0 + np.abs(hi)), 1e-12)
    else:
        Rm = None
        r_count = 0

    zero = x <= 1e-9 * scale
    # side: 0 inactive, +1 upper boundary, -1 lower boundary, +2 pinned
    # (zero-width band: a true equality whose multiplier may take any sign)
    side = np.zeros(r_count, dtype=int)
    if r_count:
        pinned = (hi - lo) <= band_tol
        v = Rm @ x
        side[v >= hi - band_tol] = 1
        side[v <= lo + band_tol] = -1
        side[pinned] = 2

    x = np.where(zero, 0.0, x)
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        free = ~zero
        nf = int(free.sum())
        act_idx = np.flatnonzero(side)
        ka = act_idx.size
        # KKT system on the face: stationarity over free vars plus the
        # active boundary rows; lstsq gives the min-norm solution when
        # the face is degenerate.
        K = np.zeros((nf + ka, nf + ka))
        rhs = np.zeros(nf + ka)
        K[:nf, :nf] = G[np.ix_(free, free)]
        rhs[:nf] = h[free]
        if ka:
            C = Rm[np.ix_(act_idx, free)]
            b = np.where(side[act_idx] == -1, lo[act_idx], hi[act_idx])
            b = np.where(side[act_idx] == 2,
                         0.5 * (lo[act_idx] + hi[act_idx]), b)
            K[:nf, nf:] = C.T
            K[nf:, :nf] = C
            rhs[nf:] = b
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        x_new = np.zeros(n)
        x_new[free] = sol[:nf]
        nu = sol[nf:]

        # Primal: keep x >= 0 by stepping toward x_new and fixing the
        # first variable that hits zero.
        neg = free & (x_new < -1e-12 * scale)
        if neg.any():
            diff = x - x_new
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(neg & (diff > 0), x / diff, np.inf)
            j = int(np.argmin(ratio))
            alpha = min(max(ratio[j], 0.0), 1.0)
            x = np.maximum(x + alpha * (x_new - x), 0.0)
            zero[j] = True
            x[j] = 0.0
            continue
        x = x_new

        # Primal: activate the most violated inactive band.
        if r_count:
            v = Rm @ x
            up = np.where(side == 0, v - hi, -np.inf)
            dn = np.where(side == 0, lo - v, -np.inf)
            worst_up, worst_dn = up.max(initial=-np.inf), dn.max(initial=-np.inf)
            if max(worst_up, worst_dn) > 1e-9 * (1.0 + np.abs(x).max()):
                if worst_up >= worst_dn:
                    side[int(np.argmax(up))] = 1
                else:
                    side[int(np.argmax(dn))] = -1
                continue

        # Dual: reduced gradient must not pull fixed variables upward,
        # and band multipliers must have the sign of their boundary.
        grad = G @ x - h
        if ka:
            grad = grad + Rm[act_idx].T @ nu
        viol_z = np.where(zero, -grad, -np.inf)
        worst_var = viol_z.max(initial=-np.inf)
        worst_band = -np.inf
        worst_band_j = -1
        for pos, j in enumerate(act_idx):
            if side[j] == 2:
                continue
            bad = -nu[pos] if side[j] == 1 else nu[pos]
            if bad > worst_band:
                worst_band, worst_band_j = bad, j
        if worst_var > dual_tol and worst_var >= worst_band:
            zero[int(np.argmax(viol_z))] = False
            continue
        if worst_band > dual_tol:
            side[worst_band_j] = 0
            continue
        return x, rounds, True
    return x, rounds, False


def solve_nnls(problem, settings=DEFAULT_SETTINGS):
    """Weighted least squares over the nonnegative orthant, honoring any
    equality bands and L-infinity caps of the problem.

    The returned point satisfies the KKT conditions of the weighted
    objective to ``abs_tol`` (gradient >= -abs_tol where x = 0, |gradient|
    <= abs_tol where x > 0, constraint forces accounted through their
    multipliers), with equalities within ``eq_slack`` and caps within
    ``linf_slack``.  Hitting the iteration limit returns the best iterate
    flagged unconverged; a constraint set with no nonnegative point
    raises ``InfeasibleProblemError``.
    """
    if not problem.nonneg:
        raise ValueError("solve_nnls requires nonneg=True")
    A, a, w = problem.matrix, problem.targets, problem.weights
    G = 2.0 * (A.T @ (w[:, None] * A))
    h = 2.0 * (A.T @ (w * a))
    ranges = problem.ranges()
    n = A.shape[1]
    scale = 1.0 + float(np.abs(a).max(initial=0.0))

    iters_left = settings.max_iters
    x = np.zeros(n)
    if ranges is None:
        budget = min(400, iters_left)
        x, used = _fista(G, h, None, 0.0, x, budget, 1e-10 * scale)
        iters_left -= used
    else:
        w_top = float(w.max())
        for mu in (1e2 * w_top, 1e4 * w_top, 1e6 * w_top):
            budget = min(800, max(iters_left, 1))
            x, used = _fista(G, h, ranges, mu, x, budget, 1e-11 * scale)
            iters_left -= used
            if iters_left <= 0:
                break

    best = x
    converged = False
    rounds = 0
    while iters_left > 0:
        x, rounds_used, ok = _kkt_polish(G, h, ranges, best, settings)
        rounds += rounds_used
        iters_left -= rounds_used
        best = x
        if ok:
            converged = True
            break
        # One more acceleration pass before giving the polish another try.
        if iters_left <= 0:
            break
        mu = 1e6 * float(w.max()) if ranges is not None else 0.0
        best, used = _fista(G, h, ranges, mu, best, min(800, iters_left),
                            1e-12 * scale)
        iters_left -= used

    max_violation = 0.0
    if ranges is not None:
        Rm, lo, hi = ranges
        v = Rm @ best
        max_violation = float(np.maximum(v - hi, lo - v).max(initial=0.0))
        feas_tol = 1e-6 * (1.0 + np.abs(hi).max(initial=0.0))
        if converged and max_violation > feas_tol:
            raise InfeasibleProblemError(
                f"constraints violated by {max_violation:g} at the KKT point")
    return SolveResult(x=best, converged=converged,
                       iterations=settings.max_iters - iters_left,
                       objective=problem.objective(best),
                       max_violation=max_violation,
                       message="" if converged else "iteration limit reached")


# ---------------------------------------------------------------------------
# Water-filling (least squares over a scaled simplex)

def simplex_water_fill(a, target):
    """Minimize sum (x_i - a_i)^2 subject to x >= 0 and sum x = target.

    The solution is x_i = max(a_i - gamma, 0) with gamma chosen so the
    clamped values sum to the target; found by a sorted scan over the
    breakpoints.
    """
    a = np.asarray(a, dtype=float).ravel()
    target = float(target)
    if target < 0:
        raise ValueError("target must be nonnegative")
    if target == 0.0 or a.size == 0:
        return np.zeros_like(a)
    s = np.sort(a)[::-1]
    csum = np.cumsum(s)
    k = np.arange(1, a.size + 1)
    gammas = (csum - target) / k
    active = s - gammas > 0
    k_star = int(np.nonzero(active)[0].max()) + 1
    gamma = gammas[k_star - 1]
    x = np.maximum(a - gamma, 0.0)
    # Pin the sum exactly (the scan is exact up to float summation).
    pos = x > 0
    resid = target - math.fsum(x[pos])
    x[pos] += resid / pos.sum()
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# Min-max (L-infinity) fitting

def _linf_violation(A, a, stds, x, t):
    return float((np.abs(A @ x - a) / stds - t).max())


def _linf_feasible(A, a, stds, t, x0, max_iters):
    """Minimize the squared hinge of normalized deviations beyond t over
    x >= 0; feasible when the worst deviation reaches ~zero."""
    An = A / stds[:, None]
    an = a / stds
    lip = 2.0 * np.abs(An.T @ An).sum(axis=1).max()
    x = np.maximum(x0, 0.0)
    y = x.copy()
    tk = 1.0
    feas_tol = 1e-8 * (1.0 + t)
    for it in range(max_iters):
        r = An @ y - an
        push = np.sign(r) * np.maximum(np.abs(r) - t, 0.0)
        g = 2.0 * (An.T @ push)
        x_new = np.maximum(y - g / lip, 0.0)
        if np.dot(g, x_new - x) > 0:
            tk = 1.0
            y = x_new
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            y = x_new + ((tk - 1.0) / t_new) * (x_new - x)
            tk = t_new
        x = x_new
        if it % 10 == 0 and _linf_violation(A, a, stds, x, t) <= feas_tol:
            return True, x, it + 1
    return _linf_violation(A, a, stds, x, t) <= feas_tol, x, max_iters


def solve_minmax(problem, settings=DEFAULT_SETTINGS):
    """Minimize the largest |answer - fitted|/std over nonnegative x.

    Bisection on the deviation bound t; each feasibility subproblem
    minimizes squared violations beyond t (an NNLS on slack violations).
    Returns (dist, result) where ``result.x`` witnesses the distance.
    """
    if problem.matrix.shape[0] < 1:
        raise ValueError("min-max fitting needs at least one term")
    A, a = problem.matrix, problem.targets
    stds = 1.0 / np.sqrt(problem.weights)
    base = QuadraticFitProblem(A, a, problem.weights, nonneg=True)
    start = solve_nnls(base, settings)
    x_wit = start.x
    hi = max(_linf_violation(A, a, stds, x_wit, 0.0), 0.0)
    lo = 0.0
    iters = start.iterations
    converged = True
    # The iteration limit applies to each feasibility solve on its own;
    # the bisection itself needs only ~60 steps to reach rel_tol.
    inner_budget = min(3000, settings.max_iters)
    if hi > settings.abs_tol:
        for _ in range(200):
            if hi - lo <= settings.rel_tol * max(1.0, hi):
                break
            t = 0.5 * (lo + hi)
            ok, x_t, used = _linf_feasible(A, a, stds, t, x_wit,
                                           max_iters=inner_budget)
            iters += used
            if ok:
                x_wit = x_t
                hi = min(t, max(_linf_violation(A, a, stds, x_t, 0.0), lo))
            else:
                lo = t
        else:
            converged = False
    else:
        hi = max(hi, 0.0)
    dist = hi
    result = SolveResult(x=x_wit, converged=converged, iterations=iters,
                         objective=problem.objective(x_wit),
                         message="" if converged else "iteration limit reached")
    return dist, result


# ---------------------------------------------------------------------------
# Order statistics of noise maxima

def max_exceed_prob(spec, j, t):
    """P(max of j fresh draws from ``spec`` >= t).

    Uses P(X < t) at discrete atoms so the boundary is counted as an
    exceedance, matching the strict-inequality convention.
    """
    j = int(j)
    if j <= 0:
        raise ValueError("j must be a positive integer")
    F = spec.cdf_left(t) if spec.is_discrete else spec.cdf(t)
    if F <= 0.0:
        return 1.0
    if F >= 1.0:
        return 0.0
    return -math.expm1(j * math.log(F))


def max_order_quantile(spec, j, p):
    """Level-p quantile of the max of j fresh draws: F^{-1}(p^(1/j))."""
    j = int(j)
    if j <= 0:
        raise ValueError("j must be a positive integer")
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    u = math.exp(math.log(p) / j)
    return float(spec.ppf(u))
