"""Noise distributions, privacy budgets, calibration, and measurement.

Supported noise families: Laplace, Gaussian, double geometric (integer
Laplace), truncated double geometric with boundary atoms, and the
discrete Gaussian.  ``calibrate`` assigns one spec per workload group
from a privacy budget; ``measure`` draws one noisy answer per query.
"""

import hashlib
import math

import numpy as np
from dataclasses import dataclass
from scipy.special import ndtr, ndtri

from .core import Histogram, Workload


@dataclass(frozen=True)
class NoiseSpec:
    """A zero-mean noise distribution with an exactly known variance.

    ``kind`` is one of ``laplace`` (scale), ``gaussian`` (sigma2),
    ``dgeo`` (rate), ``tdgeo`` (rate, bound), ``dgauss`` (sigma2), or
    ``zero``.  The ``zero`` kind is test-only: it reports a positive
    nominal variance for weighting purposes but every draw is exactly 0,
    which makes fitters deterministic; ``calibrate`` never produces it.
    """

    kind: str
    scale: float = 0.0      # laplace
    sigma2: float = 0.0     # gaussian / dgauss / zero (nominal)
    rate: float = 0.0       # dgeo / tdgeo
    bound: int = 0          # tdgeo

    @staticmethod
    def laplace(scale):
        if scale <= 0:
            raise ValueError("laplace scale must be positive")
        return NoiseSpec("laplace", scale=float(scale))

    @staticmethod
    def gaussian(sigma2):
        if sigma2 <= 0:
            raise ValueError("gaussian variance must be positive")
        return NoiseSpec("gaussian", sigma2=float(sigma2))

    @staticmethod
    def dgeo(rate):
        if rate <= 0:
            raise ValueError("double geometric rate must be positive")
        return NoiseSpec("dgeo", rate=float(rate))

    @staticmethod
    def tdgeo(rate, bound):
        if rate <= 0:
            raise ValueError("double geometric rate must be positive")
        if bound < 1 or bound != int(bound):
            raise ValueError("truncation bound must be a positive integer")
        return NoiseSpec("tdgeo", rate=float(rate), bound=int(bound))

    @staticmethod
    def dgauss(sigma2):
        if sigma2 <= 0:
            raise ValueError("discrete gaussian variance must be positive")
        return NoiseSpec("dgauss", sigma2=float(sigma2))

    @staticmethod
    def zero(nominal_variance=1.0):
        if nominal_variance <= 0:
            raise ValueError("nominal variance must be positive")
        return NoiseSpec("zero", sigma2=float(nominal_variance))

    # -- moments ------------------------------------------------------------

    @property
    def variance(self):
        """Exact variance (for ``zero``, the nominal weighting variance)."""
        if self.kind == "laplace":
            return 2.0 * self.scale ** 2
        if self.kind in ("gaussian", "zero"):
            return self.sigma2
        if self.kind == "dgeo":
            q = math.exp(-self.rate)
            return 2.0 * q / (1.0 - q) ** 2
        if self.kind == "tdgeo":
            q = math.exp(-self.rate)
            B = self.bound
            k = np.arange(1, B)
            interior = float((k ** 2 * q ** k).sum()) * (1 - q) / (1 + q)
            edge = B ** 2 * q ** B / (1 + q)
            return 2.0 * (interior + edge)
        if self.kind == "dgauss":
            k, w = self._dgauss_grid()
            return float((k ** 2 * w).sum() / w.sum())
        raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def std(self):
        return math.sqrt(self.variance)

    @property
    def is_discrete(self):
        return self.kind in ("dgeo", "tdgeo", "dgauss")

    def _dgauss_grid(self):
        sigma = math.sqrt(self.sigma2)
        K = int(math.ceil(10 * sigma)) + 30
        k = np.arange(-K, K + 1)
        w = np.exp(-k.astype(float) ** 2 / (2 * self.sigma2))
        return k, w

    # -- exact pmf / cdf ----------------------------------------------------

    def pmf(self, k):
        """Exact probability mass at integer ``k`` (discrete kinds only)."""
        k = int(k)
        if self.kind == "dgeo":
            q = math.exp(-self.rate)
            return (1 - q) / (1 + q) * q ** abs(k)
        if self.kind == "tdgeo":
            q = math.exp(-self.rate)
            B = self.bound
            if abs(k) > B:
                return 0.0
            if abs(k) == B:
                return q ** B / (1 + q)
            return (1 - q) / (1 + q) * q ** abs(k)
        if self.kind == "dgauss":
            ks, w = self._dgauss_grid()
            if abs(k) > ks[-1]:
                return 0.0
            return float(w[ks == k][0] / w.sum())
        raise ValueError(f"pmf undefined for kind {self.kind!r}")

    def cdf(self, t):
        """P(X <= t)."""
        t = float(t)
        if self.kind == "laplace":
            b = self.scale
            return 0.5 * math.exp(t / b) if t < 0 else 1 - 0.5 * math.exp(-t / b)
        if self.kind == "gaussian":
            return float(ndtr(t / math.sqrt(self.sigma2)))
        if self.kind == "zero":
            return 0.0 if t < 0 else 1.0
        k = math.floor(t)
        if self.kind == "dgeo":
            return self._dgeo_cdf_int(k)
        if self.kind == "tdgeo":
            if k < -self.bound:
                return 0.0
            if k >= self.bound:
                return 1.0
            return self._dgeo_cdf_int(k)
        if self.kind == "dgauss":
            ks, w = self._dgauss_grid()
            return float(w[ks <= k].sum() / w.sum())
        raise ValueError(f"unknown noise kind {self.kind!r}")

    def _dgeo_cdf_int(self, k):
        q = math.exp(-self.rate)
        if k >= 0:
            return 1 - q ** (k + 1) / (1 + q)
        return q ** (-k) / (1 + q)

    def cdf_left(self, t):
        """P(X < t); differs from ``cdf`` only at discrete atoms."""
        if not self.is_discrete and self.kind != "zero":
            return self.cdf(t)
        t = float(t)
        if t == math.floor(t):
            return self.cdf(t - 1)
        return self.cdf(t)

    def ppf(self, u):
        """Smallest t with P(X <= t) >= u."""
        if not 0 < u < 1:
            raise ValueError("quantile level must be in (0, 1)")
        if self.kind == "laplace":
            b = self.scale
            return -b * math.log(2 * (1 - u)) if u >= 0.5 else b * math.log(2 * u)
        if self.kind == "gaussian":
            return math.sqrt(self.sigma2) * float(ndtri(u))
        if self.kind == "zero":
            return 0.0
        lo, hi = -1, 1
        while self.cdf(lo) >= u:
            lo *= 2
        while self.cdf(hi) < u:
            hi *= 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.cdf(mid) >= u:
                hi = mid
            else:
                lo = mid
        return float(hi)


@dataclass(frozen=True)
class PrivacyBudget:
    """Pure DP (epsilon), zCDP (rho), or approximate DP (epsilon, delta)."""

    kind: str
    eps: float = 0.0
    rho: float = 0.0
    delta: float = 0.0

    @staticmethod
    def pure(eps):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        return PrivacyBudget("pure", eps=float(eps))

    @staticmethod
    def zcdp(rho):
        if rho <= 0:
            raise ValueError("rho must be positive")
        return PrivacyBudget("zcdp", rho=float(rho))

    @staticmethod
    def approx(eps, delta):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < delta < 1:
            raise ValueError("delta must be in (0, 1)")
        return PrivacyBudget("approx", eps=float(eps), delta=float(delta))

    @property
    def mechanism_label(self):
        return {"pure": "laplace", "zcdp": "gaussian", "approx": "tdgeo"}[self.kind]

    def label(self):
        if self.kind == "pure":
            return f"eps={self.eps:g}"
        if self.kind == "zcdp":
            return f"rho={self.rho:g}"
        return f"eps={self.eps:g},delta={self.delta:g}"


def calibrate(budget, workload):
    """Assign a noise spec to every group of ``workload`` for ``budget``.

    Pure DP uses Laplace with scale Delta1/eps; zCDP uses Gaussian with
    variance Delta2^2/(2 rho); approximate DP uses a truncated double
    geometric at rate eps/2 with bound B = ceil((2/eps) ln(4/delta) + 1),
    the smallest integer bound that preserves the guarantee.

    Returns a new workload whose groups carry their specs.
    """
    from .core import l1_sensitivity, l2_sensitivity

    if not isinstance(workload, Workload) or not workload.groups:
        raise ValueError("cannot calibrate an empty workload")
    if budget.kind == "pure":
        spec = NoiseSpec.laplace(l1_sensitivity(workload) / budget.eps)
    elif budget.kind == "zcdp":
        spec = NoiseSpec.gaussian(
            l2_sensitivity(workload) ** 2 / (2 * budget.rho))
    elif budget.kind == "approx":
        bound = math.ceil((2.0 / budget.eps) * math.log(4.0 / budget.delta) + 1)
        spec = NoiseSpec.tdgeo(budget.eps / 2.0, bound)
    else:
        raise ValueError(f"unknown budget kind {budget.kind!r}")
    return workload.with_noise({g.name: spec for g in workload.groups})


def sample(spec, rng, size=None):
    """Draw from a noise spec; discrete kinds return integer values.

    ``size=None`` returns a scalar float, otherwise a float array.
    """
    n = 1 if size is None else int(size)
    if spec.kind == "laplace":
        out = rng.laplace(0.0, spec.scale, n)
    elif spec.kind == "gaussian":
        out = rng.normal(0.0, math.sqrt(spec.sigma2), n)
    elif spec.kind == "zero":
        out = np.zeros(n)
    elif spec.kind == "dgeo":
        out = _sample_dgeo(spec.rate, rng, n).astype(float)
    elif spec.kind == "tdgeo":
        raw = _sample_dgeo(spec.rate, rng, n)
        out = np.clip(raw, -spec.bound, spec.bound).astype(float)
    elif spec.kind == "dgauss":
        out = _sample_dgauss(spec.sigma2, rng, n).astype(float)
    else:
        raise ValueError(f"unknown noise kind {spec.kind!r}")
    return float(out[0]) if size is None else out


def _sample_dgeo(rate, rng, n):
    # Difference of two geometrics on {0, 1, ...} has the two-sided
    # geometric law p(k) proportional to exp(-rate |k|).
    p = -math.expm1(-rate)
    g1 = rng.geometric(p, n).astype(np.int64) - 1
    g2 = rng.geometric(p, n).astype(np.int64) - 1
    return g1 - g2

def _sample_dgauss(sigma2, rng, n):
    # Exact rejection sampler from a discrete-Laplace proposal (the
    # standard construction); no continuous Gaussian is rounded.
    t = math.floor(math.sqrt(sigma2)) + 1
    out = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        batch = max(2 * (n - filled), 32)
        y = _sample_dgeo(1.0 / t, rng, batch)
        accept = np.exp(-(np.abs(y) - sigma2 / t) ** 2 / (2 * sigma2))
        keep = y[rng.random(batch) < accept]
        take = min(keep.size, n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Per-query noisy answers paired with their noise specs.

    This is the sole input every fitter sees; true answers are not kept.
    ``answers`` holds one read-only array per workload group, in group
    order.
    """

    workload: Workload
    answers: tuple

    def __init__(self, workload, answers):
        answers = tuple(np.asarray(a, dtype=float) for a in answers)
        if len(answers) != len(workload.groups):
            raise ValueError("one answer array per group required")
        for g, a in zip(workload.groups, answers):
            if a.size != len(g):
                raise ValueError(f"group {g.name!r}: {a.size} answers for "
                                 f"{len(g)} queries")
            if g.noise is None or g.noise.variance <= 0:
                raise ValueError(f"group {g.name!r} has no calibrated noise")
            a.setflags(write=False)
        object.__setattr__(self, "workload", workload)
        object.__setattr__(self, "answers", answers)

    @property
    def n_cells(self):
        return self.workload.n_cells

    def group_answers(self, name):
        for g, a in zip(self.workload.groups, self.answers):
            if g.name == name:
                return a
        raise KeyError(f"no group named {name!r}")

    def entries(self):
        """Yield (group, query, noisy answer) over all measurements."""
        for g, a in zip(self.workload.groups, self.answers):
            for q, v in zip(g.queries, a):
                yield g, q, float(v)

    def content_hash(self):
        h = hashlib.sha256()
        for a in self.answers:
            h.update(a.tobytes())
        return h.hexdigest()


def measure(hist, workload, rng):
    """Noisy answers for every workload query: true answer plus one
    independent draw from the group's calibrated spec."""
    if workload.n_cells != hist.size:
        raise ValueError("workload does not match histogram size")
    answers = []
    for g in workload.groups:
        if g.noise is None:
            raise ValueError(f"group {g.name!r} is not calibrated")
        true = g.indicator_matrix @ hist.cells
        answers.append(true + sample(g.noise, rng, len(g)))
    return MeasurementSet(workload, answers)


def clamp_mechanism(hist, budget, rng):
    """Direct microdata mechanism: per-cell noise, clamped at zero.

    Pure DP adds double geometric noise at rate eps (the per-cell query
    set has unit sensitivity); zCDP adds discrete Gaussian noise with
    variance parameter 1/(2 rho).  No sum query is measured.
    """
    if budget.kind == "pure":
        spec = NoiseSpec.dgeo(budget.eps)
    elif budget.kind == "zcdp":
        spec = NoiseSpec.dgauss(1.0 / (2.0 * budget.rho))
    else:
        raise ValueError("clamp mechanism supports pure DP and zCDP only")
    noisy = hist.cells + sample(spec, rng, hist.size)
    return Histogram(np.maximum(noisy, 0.0), hist.shape)


def trial_rng(seed, trial):
    """Independent counter-based stream for one trial, derived from
    (master seed, trial index); streams are order-independent."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(trial),))
    return np.random.Generator(np.random.Philox(ss))
