"""Scaled l0-continuation for binary sensor designs.

Stage 0 minimizes ``phi_N(w) + gamma * alpha * sum(w)``; stage ``i >= 1``
replaces the linear penalty by ``sum_l f_eps(alpha w_l)`` with ``eps = eps(i)``,
warm-started from the previous stage, until every weight is (numerically)
binary.  Binary iterates only count as converged once ``eps <= alpha/2``,
where the penalty of any binary design equals its sensor count.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidParameterError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltyConfig:
    gamma: float = 0.0
    alpha: float = 0.1
    eps_ratio: float = 2.0 / 3.0
    eps_schedule: tuple = None
    binary_tol: float = 1e-3
    max_stages: int = 40
    pgtol: float = 1e-6
    max_iter: int = 500
    warm_start: bool = True

    def __post_init__(self):
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise InvalidParameterError("gamma must be nonnegative")
        if self.alpha <= 0:
            raise InvalidParameterError("alpha must be positive")
        if self.eps_schedule is not None:
            sched = np.asarray(self.eps_schedule, dtype=float)
            if sched.size == 0 or sched[0] >= 1 or np.any(np.diff(sched) >= 0) or np.any(sched <= 0):
                raise InvalidParameterError("eps_schedule must be positive, strictly decreasing, start below 1")
        elif not 0 < self.eps_ratio < 1:
            raise InvalidParameterError("eps_ratio must lie in (0, 1)")

    def eps(self, stage):
        if stage < 1:
            raise InvalidParameterError("eps is defined for stages >= 1")
        if self.eps_schedule is not None:
            sched = self.eps_schedule
            return float(sched[min(stage, len(sched)) - 1])
        return float(self.eps_ratio**stage)

    def exact_count(self, stage):
        """True once binary designs are charged exactly their sensor count."""
        if self.eps_schedule is not None and stage >= len(self.eps_schedule):
            return True
        return stage >= 1 and self.eps(stage) <= 0.5 * self.alpha


def cubic_coefficients(eps):
    """``c0..c3`` of the C1 bridge ``sum_k c_k x^k`` on ``[eps/2, 2 eps]`` (``x = alpha w``)."""
    # Hermite form in t = (x - eps/2) / (1.5 eps) reduces to 0.5 t^3 - 1.5 t^2 + 1.5 t + 0.5
    x0, L = 0.5 * eps, 1.5 * eps
    t3, t2, t1, t0 = 0.5, -1.5, 1.5, 0.5
    # expand in powers of x: t = (x - x0)/L
    poly_t = np.poly1d([t3, t2, t1, t0])
    poly_x = poly_t(np.poly1d([1.0 / L, -x0 / L]))
    c = poly_x.coeffs[::-1]
    return np.pad(c, (0, 4 - c.size))


def f_eps(w, eps, alpha):
    """Smoothed indicator ``f_eps(alpha w)`` and its derivative with respect to ``w``."""
    if eps <= 0 or alpha <= 0:
        raise InvalidParameterError("eps and alpha must be positive")
    w = np.asarray(w, dtype=float)
    x = alpha * w
    x0, x1, L = 0.5 * eps, 2.0 * eps, 1.5 * eps
    t = np.clip((x - x0) / L, 0.0, 1.0)
    cubic = 0.5 * t**3 - 1.5 * t**2 + 1.5 * t + 0.5
    dcubic = 1.5 * (t - 1.0) ** 2 / L
    value = np.where(x < x0, x / eps, np.where(x < x1, cubic, 1.0))
    deriv = np.where(x < x0, 1.0 / eps, np.where(x < x1, dcubic, 0.0)) * alpha
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def penalty(w, cfg, stage):
    """``psi`` and its gradient; stage 0 is the alpha-scaled l1 norm."""
    w = np.asarray(w, dtype=float)
    if stage == 0:
        return cfg.alpha * float(np.sum(w)), np.full(w.shape, cfg.alpha)
    vals, ders = f_eps(w, cfg.eps(stage), cfg.alpha)
    return float(np.sum(vals)), np.asarray(ders)


def projected_gradient(w, g, lo=0.0, hi=1.0):
    return np.clip(w - g, lo, hi) - w


@dataclass
class InnerResult:
    w: np.ndarray
    value: float
    converged: bool
    message: str
    iterations: int
    pg_norm: float
    trace: list = field(default_factory=list)


def solve_inner(problem, w0, cfg, stage):
    """Minimize ``phi_N + gamma * psi`` over ``[0, 1]^s`` by projected L-BFGS."""
    w0 = np.clip(np.asarray(w0, dtype=float), 0.0, 1.0)
    cache = {}

    def fun(w):
        key = w.tobytes()
        if key not in cache:
            phi, g = problem.value_and_grad(w)
            pen, gp = penalty(w, cfg, stage)
            cache.clear()
            cache[key] = (phi + cfg.gamma * pen, g + cfg.gamma * gp)
        return cache[key]

    trace = [fun(w0)[0]]

    def callback(wk):
        trace.append(fun(wk)[0])

    res = minimize(
        fun, w0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * w0.size,
        callback=callback,
        options={"maxiter": cfg.max_iter, "gtol": cfg.pgtol, "ftol": 1e-15, "maxcor": 10},
    )
    w = np.clip(res.x, 0.0, 1.0)
    value, grad = fun(w)
    pg = float(np.linalg.norm(projected_gradient(w, grad), np.inf))
    converged = pg <= cfg.pgtol
    if not converged:
        log.debug("inner solve stage %d stopped with |pg|=%.3g: %s", stage, pg, res.message)
    return InnerResult(w, float(value), converged, str(res.message), int(res.nit), pg, trace)


def is_binary(w, tol):
    w = np.asarray(w)
    return bool(np.all(np.minimum(w, 1.0 - w) <= tol))


@dataclass
class ContinuationState:
    w: np.ndarray
    stage: int
    history: list = field(default_factory=list)
    converged: bool = False
    w_l1: np.ndarray = None
    w_binary: np.ndarray = None

    @property
    def nnz(self):
        return int(np.count_nonzero(self.w_binary)) if self.w_binary is not None else None


def continuation(problem, cfg, w0=None, stream=None):
    """Stage-0 l1 solve followed by warm-started smoothed-l0 stages."""
    s = problem.s
    w_init = np.full(s, 0.5) if w0 is None else np.asarray(w0, dtype=float)

    def log_stage(stage, res):
        phi = problem.phi_n(res.w)
        pen = penalty(res.w, cfg, stage)[0]
        rec = {
            "stage": stage,
            "eps": None if stage == 0 else cfg.eps(stage),
            "objective": phi,
            "penalty": pen,
            "nnz": int(np.count_nonzero(res.w > 0.5)),
            "l1": float(np.sum(res.w)),
            "pg_norm": res.pg_norm,
            "iterations": res.iterations,
            "inner_converged": res.converged,
        }
        state.history.append(rec)
        if stream is not None:
            stream.write(json.dumps(rec) + "\n")

    res = solve_inner(problem, w_init, cfg, 0)
    state = ContinuationState(res.w, 0, w_l1=res.w.copy())
    log_stage(0, res)
    for stage in range(1, cfg.max_stages + 1):
        start = state.w if cfg.warm_start else state.w_l1
        res = solve_inner(problem, start, cfg, stage)
        state.w, state.stage = res.w, stage
        log_stage(stage, res)
        if is_binary(res.w, cfg.binary_tol) and cfg.exact_count(stage):
            state.converged = True
            break
    if not state.converged:
        log.warning("continuation did not reach binary weights in %d stages", cfg.max_stages)
    state.w_binary = np.round(state.w).clip(0.0, 1.0)
    return state
