"""Parameter-to-observable map for the advection-diffusion model.

Implicit Euler in time, 5-point diffusion and first-order upwind advection in
space.  Observations are time averages of bilinearly interpolated
concentrations, stored time-major: entry ``j*s + l`` is sensor ``l`` at the
``j``-th observation window.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import counters
from .errors import DimensionError, InvalidParameterError
from .grid_prior import Grid, interpolation_matrix

DEFAULT_OBS_TIMES = (7.0, 9.0, 11.0, 13.0, 15.0)


@dataclass(frozen=True)
class TransportConfig:
    kappa: float = 1e-3
    t1: float = 16.0
    n_steps: int = 250
    obs_times: tuple = DEFAULT_OBS_TIMES
    obs_halfwidth: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "obs_times", tuple(float(t) for t in self.obs_times))
        if not np.isfinite(self.kappa) or self.kappa <= 0:
            raise InvalidParameterError("kappa must be positive")
        if self.n_steps < 10:
            raise InvalidParameterError("n_steps must be at least 10")
        if not self.obs_times:
            raise InvalidParameterError("need at least one observation time")
        if np.any(np.diff(self.obs_times) <= 0):
            raise InvalidParameterError("obs_times must be strictly increasing")
        if self.obs_halfwidth <= 0:
            raise InvalidParameterError("obs_halfwidth must be positive")
        if self.obs_times[-1] + self.obs_halfwidth > self.t1 + 1e-12:
            raise InvalidParameterError("last observation window extends past t1")

    @property
    def r(self):
        return len(self.obs_times)

    def check_t0(self, t0):
        if not t0 < self.obs_times[0] - self.obs_halfwidth:
            raise InvalidParameterError(
                f"T0={t0} must precede the first observation window "
                f"({self.obs_times[0] - self.obs_halfwidth})"
            )


@dataclass(frozen=True, eq=False)
class SensorNetwork:
    locations: np.ndarray
    interp: sp.csr_matrix = field(repr=False)

    @property
    def s(self):
        return self.locations.shape[0]

    @classmethod
    def from_points(cls, grid, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] < 1 or pts.shape[1] != 2:
            raise InvalidParameterError("sensor locations must be an (s, 2) array, s >= 1")
        inside = (pts[:, 0] > 0) & (pts[:, 0] < grid.a) & (pts[:, 1] > 0) & (pts[:, 1] < grid.b)
        if not inside.all():
            raise InvalidParameterError("sensors must lie strictly inside the domain")
        return cls(pts, interpolation_matrix(grid, pts))

    @classmethod
    def lattice(cls, grid, counts, margins=(0.1, 0.1)):
        """Regular ``counts[0] x counts[1]`` lattice inset by ``margins`` (length units)."""
        mx, my = margins
        xs = np.linspace(mx, grid.a - mx, counts[0])
        ys = np.linspace(my, grid.b - my, counts[1])
        X, Y = np.meshgrid(xs, ys)
        return cls.from_points(grid, np.column_stack([X.ravel(), Y.ravel()]))


def window_weights(times, lo, hi):
    """Weights ``c`` with ``sum_k c[k] u(times[k])`` equal to the mean of the
    piecewise-linear interpolant of ``u`` over ``[lo, hi]``."""
    times = np.asarray(times, dtype=float)
    if lo < times[0] - 1e-12 or hi > times[-1] + 1e-12 or hi <= lo:
        raise InvalidParameterError("averaging window not covered by the time grid")
    c = np.zeros(times.size)
    for k in range(times.size - 1):
        ta, tb = times[k], times[k + 1]
        a, b = max(lo, ta), min(hi, tb)
        if b <= a:
            continue
        dt = tb - ta
        # integrals of the two hat pieces (1 - s) and s over [a, b], s = (t - ta)/dt
        sa, sb = (a - ta) / dt, (b - ta) / dt
        int_s = dt * (sb**2 - sa**2) / 2.0
        c[k] += (b - a) - int_s
        c[k + 1] += int_s
    return c / (hi - lo)


def diffusion_matrix(grid, kappa):
    """``-kappa*Lap`` with zero-flux boundaries, ``D^{-1} K`` form (row sums zero)."""
    d = grid.half_weights()
    idx = np.arange(grid.n).reshape(grid.ny, grid.nx)
    xi, xj = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    yi, yj = idx[:-1, :].ravel(), idx[1:, :].ravel()
    wy = np.ones(grid.ny)
    wy[[0, -1]] = 0.5
    wx = np.ones(grid.nx)
    wx[[0, -1]] = 0.5
    tx = kappa / grid.hx**2 * np.repeat(wy, grid.nx - 1)
    ty = kappa / grid.hy**2 * np.tile(wx, grid.ny - 1)
    rows = np.concatenate([xi, xj, yi, yj])
    cols = np.concatenate([xj, xi, yj, yi])
    vals = -np.concatenate([tx, tx, ty, ty])
    diag = np.zeros(grid.n)
    np.add.at(diag, xi, tx)
    np.add.at(diag, xj, tx)
    np.add.at(diag, yi, ty)
    np.add.at(diag, yj, ty)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(grid.n, grid.n)).tocsr() + sp.diags(diag)
    return sp.diags(1.0 / d) @ K


def upwind_matrix(grid, vx, vy):
    """First-order upwind ``v . grad``; upstream ghost values copy the node."""
    n = grid.n
    i = np.arange(n) % grid.nx
    j = np.arange(n) // grid.nx
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for vel, pos, last, step, h in ((vx, i, grid.nx - 1, 1, grid.hx),
                                    (vy, j, grid.ny - 1, grid.nx, grid.hy)):
        vel = np.asarray(vel, dtype=float)
        fwd = (vel > 0) & (pos > 0)
        bwd = (vel < 0) & (pos < last)
        nodes = np.flatnonzero(fwd)
        rows.append(nodes)
        cols.append(nodes - step)
        vals.append(-vel[nodes] / h)
        diag[nodes] += vel[nodes] / h
        nodes = np.flatnonzero(bwd)
        rows.append(nodes)
        cols.append(nodes + step)
        vals.append(vel[nodes] / h)
        diag[nodes] -= vel[nodes] / h
    M = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    return M + sp.diags(diag)


class ForwardOperator:
    """Linear map from an initial concentration to stacked observations.

    Immutable after construction.  ``apply`` and ``apply_transpose`` accept a
    single vector or a matrix of column vectors.
    """

    def __init__(self, grid, sample, config, sensors):
        if sample.grid != grid:
            raise DimensionError("sample and operator grids differ")
        config.check_t0(sample.t0)
        self.grid = grid
        self.sample = sample
        self.config = config
        self.sensors = sensors
        self.dt = (config.t1 - sample.t0) / config.n_steps
        self.times = sample.t0 + self.dt * np.arange(config.n_steps + 1)
        h = config.obs_halfwidth
        self.window = np.array(
            [window_weights(self.times, t - h, t + h) for t in config.obs_times]
        )
        nz = np.flatnonzero(np.any(self.window != 0.0, axis=0))
        self.last_step = int(nz[-1])
        self.operator = (
            diffusion_matrix(grid, config.kappa) + upwind_matrix(grid, sample.vx, sample.vy)
        ).tocsr()
        self.step_matrix = (sp.identity(grid.n) + self.dt * self.operator).tocsc()
        self._lu = spla.splu(self.step_matrix)

    @property
    def s(self):
        return self.sensors.s

    @property
    def r(self):
        return self.config.r

    @property
    def d(self):
        return self.s * self.r

    @property
    def n(self):
        return self.grid.n

    @property
    def shape(self):
        return (self.d, self.n)

    def _solve(self, u, trans="N"):
        counters.add("transport", 1 if u.ndim == 1 else u.shape[1])
        return self._lu.solve(u, trans=trans)

    def states(self, m):
        """Concentration at every time step up to the last observation, shape ``(K+1, n)``."""
        u = np.asarray(m, dtype=float)
        out = [u]
        for _ in range(self.last_step):
            u = self._solve(u)
            out.append(u)
        return np.array(out)

    def apply(self, m):
        m = np.asarray(m, dtype=float)
        if m.shape[0] != self.n:
            raise DimensionError(f"parameter has length {m.shape[0]}, expected {self.n}")
        P = self.sensors.interp
        obs = np.zeros((self.r, self.s) + m.shape[1:])
        u = m
        for k in range(self.last_step + 1):
            if k > 0:
                u = self._solve(u)
            ck = self.window[:, k]
            if np.any(ck):
                Pu = P @ u
                for jj in np.flatnonzero(ck):
                    obs[jj] += ck[jj] * Pu
        return obs.reshape((self.d,) + m.shape[1:])

    def apply_transpose(self, d):
        d = np.asarray(d, dtype=float)
        if d.shape[0] != self.d:
            raise DimensionError(f"data has length {d.shape[0]}, expected {self.d}")
        blocks = d.reshape((self.r, self.s) + d.shape[1:])
        Pt = self.sensors.interp.T.tocsr()
        injected = np.stack([Pt @ blocks[jj] for jj in range(self.r)])  # (r, n, ...)
        x = np.tensordot(self.window[:, self.last_step], injected, axes=(0, 0))
        for k in range(self.last_step - 1, -1, -1):
            x = self._solve(x, trans="T")
            ck = self.window[:, k]
            if np.any(ck):
                x = x + np.tensordot(ck, injected, axes=(0, 0))
        return x


def assemble_dense(F, max_n=2500):
    """Dense ``d x n`` matrix of ``F`` (test oracle only)."""
    if F.n > max_n:
        raise InvalidParameterError(f"n={F.n} exceeds the dense-assembly guard {max_n}")
    return F.apply(np.eye(F.n))


def write_observations_csv(path, obs, s):
    """Write a time-major observation vector as rows ``(time_index, sensor, value)``."""
    obs = np.asarray(obs, dtype=float)
    r = obs.size // s
    table = np.column_stack([np.repeat(np.arange(r), s), np.tile(np.arange(s), r), obs])
    np.savetxt(path, table, fmt=["%d", "%d", "%.17g"], delimiter=",",
               header="time_index,sensor,value", comments="")
