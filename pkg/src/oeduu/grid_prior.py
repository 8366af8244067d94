"""Uniform grids, the Robin-augmented elliptic prior, and Gaussian fields.

Nodes are numbered row-major: node ``(i, j)`` (``i`` along x, ``j`` along y)
has index ``j * nx + i``.  The mass matrix is the identity, so adjoints are
plain transposes and the prior covariance square root is ``A^{-1}``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import counters
from .errors import DimensionError, InvalidParameterError, OutOfDomainError

ROBIN_CONSTANT = 1.42


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    a: float = 1.5
    b: float = 1.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise InvalidParameterError("grid needs at least 3 nodes per axis")
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.a <= 0 or self.b <= 0:
            raise InvalidParameterError("domain extents must be positive")

    @property
    def hx(self):
        return self.a / (self.nx - 1)

    @property
    def hy(self):
        return self.b / (self.ny - 1)

    @property
    def n(self):
        return self.nx * self.ny

    @property
    def x(self):
        return np.linspace(0.0, self.a, self.nx)

    @property
    def y(self):
        return np.linspace(0.0, self.b, self.ny)

    def coordinates(self):
        """Return ``(X, Y)`` nodal coordinate vectors of length ``n``."""
        X, Y = np.meshgrid(self.x, self.y)
        return X.ravel(), Y.ravel()

    def index(self, i, j):
        return j * self.nx + i

    def reshape(self, values):
        """View a nodal vector as an ``(ny, nx)`` array."""
        return np.asarray(values).reshape(self.ny, self.nx)

    def half_weights(self):
        """Nodal control-volume fractions: 1 inside, 1/2 on edges, 1/4 at corners."""
        wx = np.ones(self.nx)
        wx[[0, -1]] = 0.5
        wy = np.ones(self.ny)
        wy[[0, -1]] = 0.5
        return np.outer(wy, wx).ravel()


def _neighbor_pairs(grid):
    """Index pairs of x- and y-neighbors, each pair listed once."""
    idx = np.arange(grid.n).reshape(grid.ny, grid.nx)
    xpairs = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
    ypairs = (idx[:-1, :].ravel(), idx[1:, :].ravel())
    return xpairs, ypairs


def boundary_mask(grid):
    X, Y = grid.coordinates()
    return (X == 0) | (X == grid.a) | (Y == 0) | (Y == grid.b)


def _robin_operator(grid, rho, delta, beta):
    """Symmetric 5-point matrix for ``-rho*Lap + delta`` with a Robin boundary.

    Ghost-node elimination of ``rho dm/dn + beta m = 0`` doubles the inward
    coupling on boundary rows.  Scaling by the control-volume fractions ``D``
    makes ``D A_ghost`` symmetric; the returned matrix is the similar matrix
    ``D^{1/2} A_ghost D^{-1/2} = D^{-1/2} (D A_ghost) D^{-1/2}``, which keeps
    the spectrum of the ghost-node operator.
    """
    d = grid.half_weights()
    (xi, xj), (yi, yj) = _neighbor_pairs(grid)
    X, Y = grid.coordinates()
    # off-diagonal couplings of D*A_ghost: the doubled ghost coupling and the
    # half weight cancel, leaving the transverse fraction of the shared face
    cx = rho / grid.hx**2 * d[xi] / _wx(grid, xi)
    cy = rho / grid.hy**2 * d[yi] / _wy(grid, yi)
    rows = np.concatenate([xi, xj, yi, yj])
    cols = np.concatenate([xj, xi, yj, yi])
    vals = -np.concatenate([cx, cx, cy, cy])
    diag = np.zeros(grid.n)
    np.add.at(diag, xi, cx)
    np.add.at(diag, xj, cx)
    np.add.at(diag, yi, cy)
    np.add.at(diag, yj, cy)
    diag += delta * d
    # Robin term: 2*beta/h on the ghost-eliminated row, times D
    on_x = (X == 0) | (X == grid.a)
    on_y = (Y == 0) | (Y == grid.b)
    diag += np.where(on_x, 2.0 * beta / grid.hx, 0.0) * d
    diag += np.where(on_y, 2.0 * beta / grid.hy, 0.0) * d
    S = sp.coo_matrix((vals, (rows, cols)), shape=(grid.n, grid.n)).tocsr()
    S = S + sp.diags(diag)
    S = S.tocoo()
    data = S.data / np.sqrt(d[S.row] * d[S.col])
    return sp.csc_matrix((data, (S.row, S.col)), shape=S.shape)


def _wx(grid, idx):
    i = idx % grid.nx
    return np.where((i == 0) | (i == grid.nx - 1), 0.5, 1.0)


def _wy(grid, idx):
    j = idx // grid.nx
    return np.where((j == 0) | (j == grid.ny - 1), 0.5, 1.0)


@dataclass(frozen=True, eq=False)
class PriorModel:
    """Gaussian prior ``N(mean, A^{-2})`` with ``A = -rho*Lap + delta*I`` (Robin)."""

    grid: Grid
    rho: float
    delta: float
    beta: float
    A: sp.csc_matrix
    mean: np.ndarray
    solver: object = field(repr=False)

    @property
    def n(self):
        return self.grid.n

    @property
    def mass(self):
        return sp.identity(self.n, format="csr")

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionError(f"expected leading dimension {self.n}, got {v.shape[0]}")
        return v

    def solve(self, v):
        """Apply ``A^{-1}`` to a vector or to the columns of a matrix."""
        v = self._check(v)
        counters.add("prior", 1 if v.ndim == 1 else v.shape[1])
        return self.solver.solve(v)

    def apply_sqrt_cov(self, v):
        return self.solve(v)

    def apply_cov(self, v):
        return self.solve(self.solve(v))

    def apply_precision(self, v):
        """Apply ``A^2``, the inverse of the covariance."""
        v = self._check(v)
        return self.A @ (self.A @ v)

    def sample(self, rng_seed, size=None):
        rng = np.random.default_rng(rng_seed)
        if size is None:
            z = rng.standard_normal(self.n)
            return self.mean + self.solve(z)
        z = rng.standard_normal((size, self.n)).T
        return (self.mean[:, None] + self.solve(z)).T

    def trace_cov(self):
        """``tr(A^{-2})`` by a dense inverse; meant for validation-size grids."""
        Ainv = np.linalg.inv(self.A.toarray())
        return float(np.sum(Ainv * Ainv))

    def diag_cov(self):
        Ainv = np.linalg.inv(self.A.toarray())
        return np.sum(Ainv * Ainv, axis=1)


def robin_coefficient(rho, delta):
    return (rho / ROBIN_CONSTANT) * np.sqrt(delta / rho)


def build_prior(grid, rho, delta, mean=None, beta=None):
    """Assemble and factor the prior operator.

    ``beta`` defaults to ``(rho/1.42) * sqrt(delta/rho)``; pass ``beta=0`` for a
    pure Neumann boundary.
    """
    for name, value in (("rho", rho), ("delta", delta)):
        if not np.isfinite(value) or value <= 0:
            raise InvalidParameterError(f"{name} must be positive and finite, got {value}")
    if beta is None:
        beta = robin_coefficient(rho, delta)
    if not np.isfinite(beta) or beta < 0:
        raise InvalidParameterError(f"beta must be nonnegative and finite, got {beta}")
    if mean is None:
        mean = np.zeros(grid.n)
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (grid.n,):
        raise DimensionError(f"mean must have length {grid.n}")
    if not np.all(np.isfinite(mean)):
        raise InvalidParameterError("mean field must be finite")
    A = _robin_operator(grid, float(rho), float(delta), float(beta))
    assert abs(A - A.T).max() == 0.0
    solver = spla.splu(A)
    return PriorModel(grid, float(rho), float(delta), float(beta), A, mean, solver)


def apply_cov(prior, v):
    return prior.apply_cov(v)


def apply_sqrt_cov(prior, v):
    return prior.apply_sqrt_cov(v)


def sample_field(prior, rng_seed):
    """Draw ``mean + A^{-1} z`` with ``z ~ N(0, I)``; deterministic in the seed."""
    return prior.sample(rng_seed)


def interp_weights(grid, point):
    """Bilinear interpolation weights of ``point`` as ``(indices, weights)``."""
    x, y = map(float, point)
    tol = 1e-12 * max(grid.a, grid.b)
    if not (-tol <= x <= grid.a + tol and -tol <= y <= grid.b + tol):
        raise OutOfDomainError(f"point ({x}, {y}) outside [0,{grid.a}]x[0,{grid.b}]")
    x = min(max(x, 0.0), grid.a)
    y = min(max(y, 0.0), grid.b)
    i = min(int(np.floor(x / grid.hx)), grid.nx - 2)
    j = min(int(np.floor(y / grid.hy)), grid.ny - 2)
    tx = x / grid.hx - i
    ty = y / grid.hy - j
    idx = np.array([grid.index(i, j), grid.index(i + 1, j),
                    grid.index(i, j + 1), grid.index(i + 1, j + 1)])
    wts = np.array([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty])
    keep = wts != 0.0
    return idx[keep], wts[keep]


def interpolation_matrix(grid, points):
    """Sparse ``(len(points), n)`` matrix whose rows are ``interp_weights``."""
    rows, cols, vals = [], [], []
    for r, p in enumerate(points):
        idx, wts = interp_weights(grid, p)
        rows.extend([r] * len(idx))
        cols.extend(idx)
        vals.extend(wts)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(points), grid.n))


def gaussian_bumps(grid, centers, widths, amplitudes):
    """Sum of radial Gaussian bumps evaluated at the grid nodes."""
    X, Y = grid.coordinates()
    out = np.zeros(grid.n)
    for (cx, cy), w, amp in zip(centers, widths, amplitudes):
        out += amp * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * w**2))
    return out


def write_field_csv(path, values):
    np.savetxt(path, np.asarray(values, dtype=float), fmt="%.17g")


def read_field_csv(path):
    return np.loadtxt(path, dtype=float, ndmin=1)
