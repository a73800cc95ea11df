"""Transport-field estimation: Gaussian likelihoods, posterior, and model averaging.

Two observation models relate a frame pair to an unknown per-pixel
displacement field (u, v): the brightness-constancy model (one equation per
pixel, ``u*fx + v*fy = -ft``) and the continuity model, which adds a
divergence term so the moving quantity may thin or pile up.  Both are linear
Gaussian, so with an intrinsic-CAR smoothness prior on u and v the posterior
is Gaussian with sparse precision, and the smoothness scale alpha can be
integrated out exactly over a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates

from .gmrf import (
    Factor,
    Lattice2D,
    SparseSym,
    car_precision_unit,
    factorize,
    marginal_variances,
)
from .raster import DerivativeSet, Grid

# Default smoothness-scale grid for Bayesian averaging: 20 log-spaced points.
DEFAULT_ALPHA_GRID = np.logspace(-2.0, 2.0, 20)

# Ridge used when deflating the constant null vector out of the intrinsic
# prior's generalized log-determinant.
_NULL_DEFLATION_EPS = 1e-8

# Mixture-variance components with posterior weight below this are skipped;
# their contribution is smaller than the arithmetic noise of the sum.
_VARIANCE_WEIGHT_CUTOFF = 1e-12


@dataclass
class FlowField:
    """Per-pixel displacement field, optionally with posterior marginal variances."""

    u: Grid
    v: Grid
    var_u: Grid | None = None
    var_v: Grid | None = None

    def __post_init__(self):
        if not self.u.same_shape(self.v):
            raise ValueError("u and v must share dimensions")
        for g in (self.var_u, self.var_v):
            if g is not None and not g.same_shape(self.u):
                raise ValueError("variance grids must share the flow dimensions")

    @property
    def rows(self) -> int:
        return self.u.rows

    @property
    def cols(self) -> int:
        return self.u.cols


@dataclass
class LikelihoodSystem:
    """Linear Gaussian observation model ``a @ x ~ N(b, sigma2 I)``.

    ``x`` stacks the unknowns as (all u, then all v) in row-major pixel
    order; ``a`` has one row per pixel and 2*n_pixels columns; ``b`` holds
    the negated time derivative.
    """

    a: sp.csr_matrix
    b: np.ndarray
    sigma2: float

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if self.a.shape[0] != self.b.shape[0]:
            raise ValueError("design matrix and right-hand side disagree on row count")
        if self.a.shape[1] != 2 * self.a.shape[0]:
            raise ValueError("design matrix must have one row per pixel and 2n columns")

    @property
    def n_pixels(self) -> int:
        return self.a.shape[0]


@dataclass
class PosteriorSummary:
    """Grid-marginalized flow posterior: averaged mean plus per-alpha diagnostics."""

    mean: FlowField
    alpha_grid: np.ndarray
    log_marginals: np.ndarray
    alpha_weights: np.ndarray
    sigma2: float
    map_alpha: float
    jitter: float = 0.0

    def __post_init__(self):
        k = len(self.alpha_grid)
        if not (len(self.log_marginals) == len(self.alpha_weights) == k):
            raise ValueError("per-alpha vectors must match the grid length")
        if np.any(self.alpha_weights < 0) or abs(self.alpha_weights.sum() - 1.0) > 1e-12:
            raise ValueError("alpha_weights must be a probability vector")


def hs_system(d: DerivativeSet, sigma2: float = 1.0) -> LikelihoodSystem:
    """Brightness-constancy rows: ``u*fx + v*fy = -ft``, one per pixel."""
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    n = d.fx.rows * d.fx.cols
    pix = np.arange(n)
    a = sp.coo_matrix(
        (
            np.concatenate([d.fx.data, d.fy.data]),
            (np.concatenate([pix, pix]), np.concatenate([pix, n + pix])),
        ),
        shape=(n, 2 * n),
    ).tocsr()
    return LikelihoodSystem(a=a, b=-d.ft.data.copy(), sigma2=sigma2)


def ice_system(d: DerivativeSet, sigma2: float = 1.0) -> LikelihoodSystem:
    """Continuity rows: brightness-constancy plus ``eta * div(u, v)``.

    The divergence uses centered differences at interior pixels (coefficient
    +-eta/2 on the two x-neighbors of u and the two y-neighbors of v) and
    degrades to one-sided differences on the boundary ring: coefficient
    +-eta on the single available neighbor, with the balancing -+eta folded
    into the pixel's own column.  With eta identically zero this reduces
    exactly to the brightness-constancy system.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    rows, cols = d.fx.rows, d.fx.cols
    if rows < 3 or cols < 3:
        raise ValueError("continuity stencils need at least a 3x3 grid")
    n = rows * cols
    eta = d.avg.to_2d()
    idx = np.arange(n).reshape(rows, cols)

    # du/dx coefficients: right neighbor, left neighbor, own column.
    cr = np.zeros_like(eta)
    cl = np.zeros_like(eta)
    cc = np.zeros_like(eta)
    cr[:, 1:-1] = 0.5 * eta[:, 1:-1]
    cl[:, 1:-1] = -0.5 * eta[:, 1:-1]
    cr[:, 0] = eta[:, 0]
    cc[:, 0] = -eta[:, 0]
    cl[:, -1] = -eta[:, -1]
    cc[:, -1] = eta[:, -1]

    # dv/dy coefficients: down neighbor, up neighbor, own column.
    dr = np.zeros_like(eta)
    du = np.zeros_like(eta)
    dc = np.zeros_like(eta)
    dr[1:-1, :] = 0.5 * eta[1:-1, :]
    du[1:-1, :] = -0.5 * eta[1:-1, :]
    dr[0, :] = eta[0, :]
    dc[0, :] = -eta[0, :]
    du[-1, :] = -eta[-1, :]
    dc[-1, :] = eta[-1, :]

    pix = idx.ravel()
    entries = [
        # brightness-constancy pair
        (pix, pix, d.fx.data),
        (pix, n + pix, d.fy.data),
        # u divergence stencil
        (idx[:, :-1].ravel(), idx[:, 1:].ravel(), cr[:, :-1].ravel()),
        (idx[:, 1:].ravel(), idx[:, :-1].ravel(), cl[:, 1:].ravel()),
        (pix, pix, cc.ravel()),
        # v divergence stencil
        (idx[:-1, :].ravel(), n + idx[1:, :].ravel(), dr[:-1, :].ravel()),
        (idx[1:, :].ravel(), n + idx[:-1, :].ravel(), du[1:, :].ravel()),
        (pix, n + pix, dc.ravel()),
    ]
    rows_i = np.concatenate([e[0] for e in entries])
    cols_i = np.concatenate([e[1] for e in entries])
    vals = np.concatenate([e[2] for e in entries])
    a = sp.coo_matrix((vals, (rows_i, cols_i)), shape=(n, 2 * n)).tocsr()
    return LikelihoodSystem(a=a, b=-d.ft.data.copy(), sigma2=sigma2)


@lru_cache(maxsize=8)
def _prior_parts(rows: int, cols: int):
    """Per-lattice cache: unit CAR precision (sparse) and its generalized log-det.

    The intrinsic precision has one zero eigenvalue (constants), so its
    generalized log-determinant is recovered by factorizing Q + eps*I and
    subtracting ln(eps) for the deflated null vector.
    """
    lat = Lattice2D(rows, cols)
    q1 = car_precision_unit(lat)
    logdet_plus = factorize(q1, jitter=_NULL_DEFLATION_EPS).log_det - math.log(
        _NULL_DEFLATION_EPS
    )
    return q1.to_csc(), logdet_plus


def _prior_logdet_plus(lat: Lattice2D, alpha: float) -> float:
    """Generalized log-determinant of blockdiag(Q(alpha), Q(alpha)).

    Each block has n-1 nonzero eigenvalues scaling as alpha^2, so the stacked
    prior contributes 4*(n-1)*ln(alpha) on top of the alpha=1 value.
    """
    _, unit_block = _prior_parts(lat.rows, lat.cols)
    return 4.0 * (lat.n - 1) * math.log(alpha) + 2.0 * unit_block


def _posterior_parts(
    sys: LikelihoodSystem,
    lat: Lattice2D,
    alpha: float,
    ata: sp.csc_matrix,
    atb: np.ndarray,
    jitter: float,
) -> tuple[np.ndarray, Factor, float]:
    """Posterior mean, factored precision, and log marginal likelihood at one alpha.

    The evidence uses the standard intrinsic-prior convention: the improper
    prior carries (2*pi)^{-(m-k)/2} |Q|_+^{1/2} with k = 2 free constants
    (one per flow component), so

        log p(b | alpha) = -(n/2) ln(2 pi sigma2) + (k/2) ln(2 pi)
                           + (1/2) log|Q2(alpha)|_+ - (1/2) log|P|
                           + (1/2) m'Pm - b'b / (2 sigma2).

    Only differences across alpha matter for the averaging weights; the
    alpha-independent terms are kept so the value is a genuine log density.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    q1_csc, _ = _prior_parts(lat.rows, lat.cols)
    q_block = (alpha * alpha) * q1_csc
    prec = (ata / sys.sigma2 + sp.block_diag((q_block, q_block), format="csc")).tocsc()
    prec_sym = SparseSym.from_upper_csr(sp.triu(prec).tocsr())
    factor = factorize(prec_sym, jitter=jitter)
    mean = factor.solve(atb / sys.sigma2)
    n_obs = sys.n_pixels
    quad = float(mean @ atb) / sys.sigma2  # m'Pm via Pm = A'b/sigma2
    log_marginal = (
        -0.5 * n_obs * math.log(2.0 * math.pi * sys.sigma2)
        + math.log(2.0 * math.pi)
        + 0.5 * _prior_logdet_plus(lat, alpha)
        - 0.5 * factor.log_det
        + 0.5 * quad
        - 0.5 * float(sys.b @ sys.b) / sys.sigma2
    )
    return mean, factor, log_marginal


def _check_dims(sys: LikelihoodSystem, lat: Lattice2D) -> None:
    if sys.a.shape[1] != 2 * lat.n:
        raise ValueError(
            f"system has {sys.a.shape[1]} unknowns but lattice {lat.rows}x{lat.cols} needs {2 * lat.n}"
        )


def _split_field(lat: Lattice2D, x: np.ndarray, var: np.ndarray | None = None) -> FlowField:
    n = lat.n
    return FlowField(
        u=Grid(lat.rows, lat.cols, x[:n]),
        v=Grid(lat.rows, lat.cols, x[n:]),
        var_u=None if var is None else Grid(lat.rows, lat.cols, var[:n]),
        var_v=None if var is None else Grid(lat.rows, lat.cols, var[n:]),
    )


def posterior_given_alpha(
    sys: LikelihoodSystem,
    lat: Lattice2D,
    alpha: float,
    jitter: float = 0.0,
    want_variances: bool = True,
) -> tuple[FlowField, float]:
    """Flow posterior for a fixed smoothness scale.

    Returns the posterior mean field (with marginal variances unless
    ``want_variances`` is off; the variance solves dominate the cost on
    large lattices) and the log marginal likelihood of the data at this
    alpha.
    """
    _check_dims(sys, lat)
    ata = (sys.a.T @ sys.a).tocsc()
    atb = sys.a.T @ sys.b
    mean, factor, log_marginal = _posterior_parts(sys, lat, alpha, ata, atb, jitter)
    var = marginal_variances(factor, np.arange(2 * lat.n)) if want_variances else None
    return _split_field(lat, mean, var), log_marginal


def bayes_flow(
    sys: LikelihoodSystem,
    lat: Lattice2D,
    alpha_grid=None,
    alpha_prior=None,
    jitter: float = 0.0,
    want_variances: bool = True,
) -> PosteriorSummary:
    """Marginalize the smoothness scale over a grid by model averaging.

    Per-alpha posteriors are weighted by exp(log marginal + log prior),
    normalized after a max-log shift.  The reported mean field is the
    weighted average of the per-alpha means; variance grids (when requested)
    are the mixture variances, i.e. weighted within-component variance plus
    between-component spread of the means.  Components with weight below
    1e-12 are skipped when accumulating variances.
    """
    _check_dims(sys, lat)
    grid = np.asarray(DEFAULT_ALPHA_GRID if alpha_grid is None else alpha_grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("alpha_grid must not be empty")
    if np.any(grid <= 0):
        raise ValueError("alpha_grid values must be positive")
    if alpha_prior is None:
        prior = np.full(grid.size, 1.0 / grid.size)
    else:
        prior = np.asarray(alpha_prior, dtype=np.float64)
        if prior.shape != grid.shape:
            raise ValueError("alpha_prior must match alpha_grid in length")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-8:
            raise ValueError("alpha_prior must be a probability vector")

    ata = (sys.a.T @ sys.a).tocsc()
    atb = sys.a.T @ sys.b
    means = np.empty((grid.size, 2 * lat.n))
    log_marg = np.empty(grid.size)
    for j, alpha in enumerate(grid):
        means[j], _, log_marg[j] = _posterior_parts(sys, lat, float(alpha), ata, atb, jitter)

    with np.errstate(divide="ignore"):
        log_w = log_marg + np.log(prior)
    finite = np.isfinite(log_w)
    if not finite.any():
        raise ValueError("all alpha values have zero posterior weight")
    weights = np.zeros(grid.size)
    shift = log_w[finite].max()
    weights[finite] = np.exp(log_w[finite] - shift)
    weights /= weights.sum()

    mean = weights @ means
    var = None
    if want_variances:
        var = np.zeros(2 * lat.n)
        for j in range(grid.size):
            if weights[j] <= _VARIANCE_WEIGHT_CUTOFF:
                continue
            _, factor, _ = _posterior_parts(sys, lat, float(grid[j]), ata, atb, jitter)
            var_j = marginal_variances(factor, np.arange(2 * lat.n))
            var += weights[j] * (var_j + (means[j] - mean) ** 2)

    map_alpha = float(grid[int(np.argmax(log_w))])
    return PosteriorSummary(
        mean=_split_field(lat, mean, var),
        alpha_grid=grid,
        log_marginals=log_marg,
        alpha_weights=weights,
        sigma2=sys.sigma2,
        map_alpha=map_alpha,
        jitter=jitter,
    )


def advect(eta: Grid, w: FlowField, direction: str = "forward") -> Grid:
    """Semi-Lagrangian transport of a scalar field along (or against) the flow.

    Forward advection samples the field at p - w(p) (values travel with the
    flow); backward samples at p + w(p) (rewinding).  Sampling is bilinear
    with out-of-domain positions clamped to the nearest edge pixel.
    """
    if not eta.same_shape(w.u):
        raise ValueError("field and flow must share dimensions")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    sign = -1.0 if direction == "forward" else 1.0
    jj, ii = np.meshgrid(np.arange(eta.cols), np.arange(eta.rows))
    x = jj + sign * w.u.to_2d()
    y = ii + sign * w.v.to_2d()
    out = map_coordinates(eta.to_2d(), [y, x], order=1, mode="nearest")
    return Grid.from_2d(out)
