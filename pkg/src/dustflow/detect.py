"""Dust detectors: threshold rules, linear discriminant, and latent-surface GLM.

Three interchangeable ways to turn multi-channel thermal imagery into a
per-pixel dust score: a classical strict-inequality threshold scheme on
brightness-temperature differences, Fisher linear discriminant analysis on
the raw three-channel intensities, and a latent-signal-mapping detector that
learns a smooth 2-D surface per channel over (intensity, emissivity) bins
with a CAR smoothness prior, fitted by Newton's method with a
Laplace-approximate evidence for the smoothness scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit

from .gmrf import Lattice2D, SparseSym, car_precision_unit, factorize
from .raster import (
    CH_BT87,
    CH_BT108,
    CH_BT120,
    CH_DBG,
    CH_DBR,
    CH_EMIS,
    CH_ROLLMEAN,
    ChannelStack,
    Grid,
    _format_value,
)

# Intensity channels consumed by the statistical detectors, in sample order.
INTENSITY_CHANNELS = (CH_BT120, CH_BT108, CH_BT87)

# Ridge added to the latent-surface prior precision: the likelihood only sees
# the sum of the three surfaces, so constant shifts that cancel between
# surfaces are unidentified without it.
LSM_PRIOR_RIDGE = 1e-6

DEFAULT_RHO_GRID = np.logspace(-2.0, 2.0, 5)


class ConvergenceError(RuntimeError):
    """Newton fit failed to reach the gradient tolerance."""

    def __init__(self, message: str, grad_norm: float):
        super().__init__(f"{message} (last gradient norm {grad_norm:.3e})")
        self.grad_norm = float(grad_norm)


@dataclass(frozen=True)
class ThresholdRule:
    """Strict-inequality dust test on brightness-temperature layers.

    A pixel is dusty iff dT_BR > t_br, dT_BG < t_bg, BT10.8 < t_bt108
    (skipped when use_bt108 is off), and dT_BR - M < t_anom (skipped when
    t_anom is None; M is the rolling-mean anomaly reference layer).
    """

    use_bt108: bool = True
    t_br: float = 0.0
    t_bg: float = 10.0
    t_bt108: float = 285.0
    t_anom: float | None = -2.0

    def __post_init__(self):
        for name in ("t_br", "t_bg", "t_bt108"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.t_anom is not None and not np.isfinite(self.t_anom):
            raise ValueError("t_anom must be finite or None")


def threshold_detect(stack: ChannelStack, rule: ThresholdRule = ThresholdRule()) -> Grid:
    """Apply a ThresholdRule to a channel stack; returns a 0/1 grid."""
    required = [CH_DBR, CH_DBG]
    if rule.use_bt108:
        required.append(CH_BT108)
    if rule.t_anom is not None:
        required.append(CH_ROLLMEAN)
    missing = [name for name in required if name not in stack]
    if missing:
        raise ValueError(f"stack is missing required layers: {missing}")
    d_br = stack[CH_DBR].to_2d()
    mask = (d_br > rule.t_br) & (stack[CH_DBG].to_2d() < rule.t_bg)
    if rule.use_bt108:
        mask &= stack[CH_BT108].to_2d() < rule.t_bt108
    if rule.t_anom is not None:
        mask &= (d_br - stack[CH_ROLLMEAN].to_2d()) < rule.t_anom
    return Grid.from_2d(mask.astype(np.float64))


@dataclass(frozen=True)
class LabeledSample:
    """One training pixel: three intensities, emissivity covariate, binary label.

    ``emissivity`` is stored per channel; constructing with a scalar
    replicates it across the three channels (the usual case: one emissivity
    product shared by all channels).
    """

    index: int
    intensity: tuple[float, float, float]
    emissivity: tuple[float, float, float]
    label: int
    hour_of_day: float

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if len(self.intensity) != 3 or not all(np.isfinite(self.intensity)):
            raise ValueError("intensity must be three finite values")
        if len(self.emissivity) != 3 or not all(np.isfinite(self.emissivity)):
            raise ValueError("emissivity must be three finite values")

    @classmethod
    def make(cls, index, intensity, emissivity, label, hour_of_day) -> "LabeledSample":
        e = np.atleast_1d(np.asarray(emissivity, dtype=np.float64))
        if e.size == 1:
            e = np.repeat(e, 3)
        return cls(
            index=int(index),
            intensity=tuple(float(x) for x in intensity),
            emissivity=tuple(float(x) for x in e),
            label=int(label),
            hour_of_day=float(hour_of_day),
        )


def save_samples(samples: list[LabeledSample], path) -> None:
    """Write samples as 'samples <n>' then 'I1 I2 I3 E label hour' per line.

    The text format carries one emissivity value per sample (the first
    channel's), matching the scalar-emissivity reading.
    """
    lines = [f"samples {len(samples)}"]
    for s in samples:
        fields = [*s.intensity, s.emissivity[0], s.label, s.hour_of_day]
        lines.append(" ".join(_format_value(float(x)) for x in fields))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_samples(path) -> list[LabeledSample]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != "samples":
        raise ValueError(f"line 1: expected header 'samples <n>', got {lines[0]!r}")
    try:
        count = int(head[1])
    except ValueError:
        raise ValueError(f"line 1: non-integer sample count in {lines[0]!r}") from None
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"line {lineno}: expected 6 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"line {lineno}: unparseable value in {line!r}") from None
        if vals[4] not in (0.0, 1.0):
            raise ValueError(f"line {lineno}: label must be 0 or 1, got {parts[4]}")
        samples.append(
            LabeledSample.make(
                index=len(samples),
                intensity=vals[0:3],
                emissivity=vals[3],
                label=int(vals[4]),
                hour_of_day=vals[5],
            )
        )
    if len(samples) != count:
        raise ValueError(f"header announced {count} samples, file holds {len(samples)}")
    return samples


@dataclass(frozen=True)
class LdaModel:
    """Linear score eta = r . I + q; eta > 0 reads as dust.

    ``ridge`` reports the diagonal boost applied when the within-class
    scatter was singular (0.0 when none was needed).
    """

    q: float
    r: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.r)) and np.isfinite(self.q)):
            raise ValueError("model coefficients must be finite")


def lda_fit(samples: list[LabeledSample], use_class_priors: bool = False) -> LdaModel:
    """Two-class Fisher discriminant on the three intensity channels.

    r solves S_w r = mu1 - mu0 with S_w the pooled within-class covariance;
    the intercept puts the eta = 0 boundary at the class-mean midpoint
    (equal priors), shifted by log(n1/n0) when ``use_class_priors`` is set.
    """
    x = np.array([s.intensity for s in samples], dtype=np.float64)
    y = np.array([s.label for s in samples], dtype=np.int64)
    if len(samples) < 4:
        raise ValueError(f"need at least 4 samples, got {len(samples)}")
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n0 == 0 or n1 == 0:
        raise ValueError("both classes must be present")
    x0, x1 = x[y == 0], x[y == 1]
    mu0, mu1 = x0.mean(axis=0), x1.mean(axis=0)
    c0, c1 = x0 - mu0, x1 - mu1
    sw = (c0.T @ c0 + c1.T @ c1) / (len(y) - 2)
    ridge = 0.0
    try:
        r = cho_solve(cho_factor(sw), mu1 - mu0)
    except LinAlgError:
        ridge = 1e-8
        r = cho_solve(cho_factor(sw + ridge * np.eye(3)), mu1 - mu0)
    q = -0.5 * float(r @ (mu0 + mu1))
    if use_class_priors:
        q += math.log(n1 / n0)
    return LdaModel(q=q, r=r, ridge=ridge)


def lda_eta(model: LdaModel, intensity) -> np.ndarray:
    """Linear dust score for an (n, 3) array of intensities."""
    return np.asarray(intensity, dtype=np.float64) @ model.r + model.q


def lda_predict(model: LdaModel, stack: ChannelStack) -> Grid:
    """Per-pixel dust probability expit(eta); the 0.5 contour is eta = 0."""
    x = np.stack([stack[name].data for name in INTENSITY_CHANNELS], axis=1)
    return Grid(stack.rows, stack.cols, expit(lda_eta(model, x)))


def bin_index(x, lo: float, hi: float, bins: int) -> np.ndarray:
    """Equal-width bin of x over [lo, hi]; out-of-range clamps to edge bins."""
    x = np.asarray(x, dtype=np.float64)
    if hi <= lo:
        return np.zeros(x.shape, dtype=np.int64)
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


@dataclass(frozen=True)
class LatentSurface:
    """Smooth latent function over an (axis-a, axis-b) bin grid.

    Axis a carries the channel intensity, axis b the emissivity covariate;
    with bins_b = 1 the surface degenerates to a 1-D random-walk curve over
    intensity alone.
    """

    bins_a: int
    bins_b: int
    range_a: tuple[float, float]
    range_b: tuple[float, float]
    values: Grid
    rho: float

    def __post_init__(self):
        if self.values.shape != (self.bins_a, self.bins_b):
            raise ValueError("surface grid must be bins_a x bins_b")
        if self.range_a[1] < self.range_a[0] or self.range_b[1] < self.range_b[0]:
            raise ValueError("bin ranges must be nonempty")

    def lookup(self, a_vals, b_vals) -> np.ndarray:
        ia = bin_index(a_vals, *self.range_a, self.bins_a)
        ib = bin_index(b_vals, *self.range_b, self.bins_b)
        return self.values.to_2d()[ia, ib]


@dataclass(frozen=True)
class FitReport:
    iterations: int
    grad_norm: float
    rho: float
    rho_grid: np.ndarray
    evidences: np.ndarray
    # Penalized objective at the start point and after each accepted Newton
    # step, for the winning smoothness scale; non-decreasing by construction.
    objectives: np.ndarray


@dataclass(frozen=True)
class LsmModel:
    """Three fitted latent surfaces; dust logit = sum of per-channel lookups."""

    surfaces: tuple[LatentSurface, LatentSurface, LatentSurface]
    fitted: bool = False
    fit_report: FitReport | None = None


def _design_matrix(samples, ranges_i, ranges_e, bins_a, bins_b) -> sp.csr_matrix:
    """Binary design: row per sample, one 1 per channel at that channel's bin cell."""
    n = len(samples)
    block = bins_a * bins_b
    intens = np.array([s.intensity for s in samples])
    emiss = np.array([s.emissivity for s in samples])
    rows = np.tile(np.arange(n), 3)
    cols = np.concatenate(
        [
            c * block
            + bin_index(intens[:, c], *ranges_i[c], bins_a) * bins_b
            + bin_index(emiss[:, c], *ranges_e[c], bins_b)
            for c in range(3)
        ]
    )
    return sp.coo_matrix((np.ones(3 * n), (rows, cols)), shape=(n, 3 * block)).tocsr()


def _prior_precision(bins_a: int, bins_b: int, rho: float) -> SparseSym:
    """2*rho times the stacked CAR precision, plus the identifiability ridge.

    The factor 2 converts the edge-sum penalty rho * sum (g_s - g_n)^2 into
    the Gaussian exponent -(1/2) g'Qg.
    """
    q1 = car_precision_unit(Lattice2D(bins_a, bins_b)).to_csc()
    stacked = sp.block_diag((q1, q1, q1), format="csc")
    m = stacked.shape[0]
    prec = (2.0 * rho) * stacked + LSM_PRIOR_RIDGE * sp.identity(m, format="csc")
    return SparseSym.from_upper_csr(sp.triu(prec).tocsr())


def _newton_mode(a, labels, q_prior, theta0, max_iter, tol_scale):
    """Maximize Bernoulli log-likelihood minus (1/2) theta'Q theta by Newton steps.

    Step halving (at most 30 halvings) enforces a non-decreasing objective.
    Returns (theta_hat, hessian_factor, iterations, grad_norm, objectives)
    where ``objectives`` lists the objective at the start point and after
    each accepted step.
    """
    q_csc = q_prior.to_csc()
    theta = theta0.copy()
    labels = labels.astype(np.float64)

    def objective(t):
        eta = a @ t
        return float(labels @ eta - np.logaddexp(0.0, eta).sum() - 0.5 * t @ (q_csc @ t))

    obj = objective(theta)
    objectives = [obj]
    eta = a @ theta
    grad = a.T @ (labels - expit(eta)) - q_csc @ theta
    tol = tol_scale * (1.0 + float(np.abs(grad).max()))
    factor = None
    for iteration in range(max_iter):
        grad_norm = float(np.abs(grad).max())
        w = expit(eta)
        w = w * (1.0 - w)
        hess = (a.T.multiply(w) @ a + q_csc).tocsc()
        factor = factorize(SparseSym.from_upper_csr(sp.triu(hess).tocsr()))
        if grad_norm <= tol:
            return theta, factor, iteration, grad_norm, objectives
        step = factor.solve(grad)
        scale = 1.0
        for _ in range(31):
            candidate = theta + scale * step
            cand_obj = objective(candidate)
            if cand_obj >= obj:
                break
            scale *= 0.5
        else:
            raise ConvergenceError("line search stalled", grad_norm)
        theta, obj = candidate, cand_obj
        objectives.append(obj)
        eta = a @ theta
        grad = a.T @ (labels - expit(eta)) - q_csc @ theta
    raise ConvergenceError(f"no convergence after {max_iter} iterations", float(np.abs(grad).max()))


def lsm_fit(
    samples: list[LabeledSample],
    bins: int = 100,
    rho_grid=None,
    bins_b: int | None = None,
    max_iter: int = 100,
    tol_scale: float = 1e-6,
) -> LsmModel:
    """Fit the latent-surface detector by penalized Newton iteration.

    One surface per channel over (intensity, emissivity) bins; bin ranges are
    the empirical per-axis extremes of the training data.  The smoothness
    scale rho is chosen from ``rho_grid`` by Laplace-approximate marginal
    likelihood: log-lik at the mode, minus the prior quadratic form, plus
    half the prior-vs-Hessian log-determinant difference.  Passing
    ``bins_b=1`` collapses the emissivity axis, recovering 1-D random-walk
    curves over intensity alone.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 intensity bins, got {bins}")
    if not samples:
        raise ValueError("no training samples")
    bins_a = int(bins)
    bins_b = bins_a if bins_b is None else int(bins_b)
    if bins_b < 1:
        raise ValueError(f"bins_b must be positive, got {bins_b}")
    grid = np.asarray(DEFAULT_RHO_GRID if rho_grid is None else rho_grid, dtype=np.float64)
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("rho_grid must be nonempty and positive")

    intens = np.array([s.intensity for s in samples])
    emiss = np.array([s.emissivity for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.float64)
    ranges_i = [(float(intens[:, c].min()), float(intens[:, c].max())) for c in range(3)]
    ranges_e = [(float(emiss[:, c].min()), float(emiss[:, c].max())) for c in range(3)]
    a = _design_matrix(samples, ranges_i, ranges_e, bins_a, bins_b)
    block = bins_a * bins_b

    best = None
    evidences = []
    theta = np.zeros(3 * block)
    for rho in grid:
        q_prior = _prior_precision(bins_a, bins_b, float(rho))
        theta, hess_factor, iters, grad_norm, objectives = _newton_mode(
            a, labels, q_prior, theta, max_iter, tol_scale
        )
        eta = a @ theta
        loglik = float(labels @ eta - np.logaddexp(0.0, eta).sum())
        prior_quad = float(theta @ (q_prior.to_csc() @ theta))
        evidence = (
            loglik
            - 0.5 * prior_quad
            + 0.5 * factorize(q_prior).log_det
            - 0.5 * hess_factor.log_det
        )
        evidences.append(evidence)
        if best is None or evidence > best["evidence"]:
            best = dict(
                evidence=evidence, rho=float(rho), theta=theta.copy(),
                iterations=iters, grad_norm=grad_norm,
                objectives=np.array(objectives),
            )

    evidences = np.array(evidences)
    surfaces = tuple(
        LatentSurface(
            bins_a=bins_a,
            bins_b=bins_b,
            range_a=ranges_i[c],
            range_b=ranges_e[c],
            values=Grid(bins_a, bins_b, best["theta"][c * block : (c + 1) * block]),
            rho=best["rho"],
        )
        for c in range(3)
    )
    report = FitReport(
        iterations=best["iterations"],
        grad_norm=best["grad_norm"],
        rho=best["rho"],
        rho_grid=grid,
        evidences=evidences,
        objectives=best["objectives"],
    )
    return LsmModel(surfaces=surfaces, fitted=True, fit_report=report)


def lsm_eta(model: LsmModel, intensity, emissivity) -> np.ndarray:
    """Dust logit for (n, 3) intensities and (n, 3) (or scalar-per-row) emissivities."""
    if not model.fitted:
        raise ValueError("model is not fitted")
    intensity = np.asarray(intensity, dtype=np.float64)
    emissivity = np.asarray(emissivity, dtype=np.float64)
    if emissivity.ndim == 1:
        emissivity = np.repeat(emissivity[:, None], 3, axis=1)
    eta = np.zeros(intensity.shape[0])
    for c, surface in enumerate(model.surfaces):
        eta += surface.lookup(intensity[:, c], emissivity[:, c])
    return eta


def lsm_predict(model: LsmModel, stack: ChannelStack) -> Grid:
    """Per-pixel dust probability from a fitted latent-surface model.

    The stack must carry the three intensity channels and emissivity, either
    one shared layer 'E' or per-channel layers 'E1', 'E2', 'E3'.
    """
    if not model.fitted:
        raise ValueError("model is not fitted")
    intensity = np.stack([stack[name].data for name in INTENSITY_CHANNELS], axis=1)
    per_channel = [f"E{c + 1}" for c in range(3)]
    if all(name in stack for name in per_channel):
        emissivity = np.stack([stack[name].data for name in per_channel], axis=1)
    elif CH_EMIS in stack:
        emissivity = np.repeat(stack[CH_EMIS].data[:, None], 3, axis=1)
    else:
        raise ValueError("stack is missing emissivity (layer 'E' or 'E1'/'E2'/'E3')")
    eta = lsm_eta(model, intensity, emissivity)
    return Grid(stack.rows, stack.cols, expit(eta))


def classify(prob: Grid, cutoff: float = 0.5) -> Grid:
    """Binary decision: 1 where probability strictly exceeds the cutoff."""
    if not 0.0 < cutoff < 1.0:
        raise ValueError(f"cutoff must lie in (0, 1), got {cutoff}")
    p = prob.data
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    return Grid(prob.rows, prob.cols, (p > cutoff).astype(np.float64))
