"""Realizations of the irreducible uncertainty: permeability, Darcy velocity, T0.

The pressure solve is a primal finite-volume discretization of
``-div(exp(theta) grad p) = 0`` on the node lattice with ``p = 0`` on the left
edge, ``p = 1`` on the right edge and no flux through top and bottom.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameterError, NumericalError
from .grid_prior import Grid, read_field_csv, write_field_csv


@dataclass(frozen=True, eq=False)
class UncertainSample:
    grid: Grid
    theta: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    t0: float
    pressure: np.ndarray = field(default=None, repr=False)
    seed: object = None

    @property
    def velocity(self):
        return self.vx, self.vy

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_field_csv(directory / "theta.csv", self.theta)
        write_field_csv(directory / "vx.csv", self.vx)
        write_field_csv(directory / "vy.csv", self.vy)
        if self.pressure is not None:
            write_field_csv(directory / "pressure.csv", self.pressure)
        meta = {
            "t0": self.t0,
            "seed": _jsonable_seed(self.seed),
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny, "a": self.grid.a, "b": self.grid.b},
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        grid = Grid(**meta["grid"])
        pfile = directory / "pressure.csv"
        return cls(
            grid,
            read_field_csv(directory / "theta.csv"),
            read_field_csv(directory / "vx.csv"),
            read_field_csv(directory / "vy.csv"),
            float(meta["t0"]),
            read_field_csv(pfile) if pfile.exists() else None,
            meta["seed"],
        )


def _jsonable_seed(seed):
    if seed is None or isinstance(seed, int):
        return seed
    return [int(s) for s in np.atleast_1d(seed)]


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def pressure_matrix(grid, theta):
    """Symmetric finite-volume conductance matrix on all nodes (no BCs)."""
    k = np.exp(np.asarray(theta, dtype=float))
    idx = np.arange(grid.n).reshape(grid.ny, grid.nx)
    wy = np.ones(grid.ny)
    wy[[0, -1]] = 0.5
    wx = np.ones(grid.nx)
    wx[[0, -1]] = 0.5
    xi, xj = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    yi, yj = idx[:-1, :].ravel(), idx[1:, :].ravel()
    tx = _harmonic(k[xi], k[xj]) * np.repeat(wy, grid.nx - 1) * grid.hy / grid.hx
    ty = _harmonic(k[yi], k[yj]) * np.tile(wx, grid.ny - 1) * grid.hx / grid.hy
    rows = np.concatenate([xi, xj, yi, yj])
    cols = np.concatenate([xj, xi, yj, yi])
    vals = -np.concatenate([tx, tx, ty, ty])
    diag = np.zeros(grid.n)
    np.add.at(diag, xi, tx)
    np.add.at(diag, xj, tx)
    np.add.at(diag, yi, ty)
    np.add.at(diag, yj, ty)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(grid.n, grid.n)).tocsr()
    return (K + sp.diags(diag)).tocsr()


def solve_pressure(grid, theta, return_residual=False):
    """Pressure with ``p = 0`` at ``x = 0`` and ``p = 1`` at ``x = a``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (grid.n,) or not np.all(np.isfinite(theta)):
        raise InvalidParameterError("theta must be a finite nodal field")
    K = pressure_matrix(grid, theta)
    i = np.arange(grid.n) % grid.nx
    left, right = i == 0, i == grid.nx - 1
    free = ~(left | right)
    p = np.zeros(grid.n)
    p[right] = 1.0
    Kff = K[free][:, free].tocsc()
    rhs = -K[free][:, ~free] @ p[~free]
    try:
        p[free] = spla.spsolve(Kff, rhs)
    except RuntimeError as exc:  # singular factor
        raise NumericalError(f"pressure solve failed: {exc}") from exc
    residual = np.linalg.norm(Kff @ p[free] - rhs)
    if not np.isfinite(residual):
        raise NumericalError("pressure solve produced non-finite values")
    if return_residual:
        return p, residual
    return p


def velocity_from_pressure(grid, theta, p):
    """Darcy velocity ``-exp(theta) grad p`` at the nodes.

    Centered differences inside, second-order one-sided on the edges; the normal component
    on the no-flux top and bottom edges is set by the boundary condition.
    """
    k = grid.reshape(np.exp(theta))
    P = grid.reshape(p)
    dpdy, dpdx = np.gradient(P, grid.hy, grid.hx, edge_order=2)
    vx = -k * dpdx
    vy = -k * dpdy
    vy[[0, -1], :] = 0.0
    return vx.ravel(), vy.ravel()


def divergence(grid, vx, vy):
    """Centered-difference divergence on interior nodes, shape ``(ny-2, nx-2)``."""
    VX, VY = grid.reshape(vx), grid.reshape(vy)
    dvx = (VX[1:-1, 2:] - VX[1:-1, :-2]) / (2 * grid.hx)
    dvy = (VY[2:, 1:-1] - VY[:-2, 1:-1]) / (2 * grid.hy)
    return dvx + dvy


def draw_sample(prior_theta, t0_range=(-1.0, 1.0), rng_seed=0):
    """Sample ``theta`` from the Gaussian field, solve for the flow, draw ``T0``."""
    lo, hi = map(float, t0_range)
    if not hi >= lo:
        raise InvalidParameterError("t0_range must satisfy lo <= hi")
    grid = prior_theta.grid
    theta_ss, t0_ss = np.random.SeedSequence(rng_seed).spawn(2)
    theta = prior_theta.sample(theta_ss)
    p = solve_pressure(grid, theta)
    vx, vy = velocity_from_pressure(grid, theta, p)
    t0 = float(np.random.default_rng(t0_ss).uniform(lo, hi))
    return UncertainSample(grid, theta, vx, vy, t0, p, rng_seed)


def constant_sample(grid, t0, velocity=(0.0, 0.0)):
    """A sample with spatially constant velocity; used for diagnostics and tests."""
    vx = np.full(grid.n, float(velocity[0]))
    vy = np.full(grid.n, float(velocity[1]))
    return UncertainSample(grid, np.zeros(grid.n), vx, vy, float(t0))
