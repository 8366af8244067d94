"""Sample-average A-optimal criterion evaluated in observation space.

For sample ``i`` and design ``w`` the posterior-covariance trace is
``tr(Gpr) - tr K_i(w)`` with ``K_i = sigma^-2 S_i^{-1} W H_i`` and
``S_i = I + sigma^-2 W G_i``.  ``W`` repeats ``w`` once per observation time
(time-major layout), so data index ``j*s + l`` carries weight ``w_l``.
"""

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import DimensionError, InvalidParameterError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.01

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise InvalidParameterError("sigma must be positive")

    @property
    def precision(self):
        return self.sigma**-2


@dataclass
class EvalStats:
    """Counters for objective/gradient evaluations; optionally streamed as JSON lines."""

    n_value: int = 0
    n_grad: int = 0
    seconds: float = 0.0
    stream: object = field(default=None, repr=False)

    def record(self, kind, seconds, **extra):
        if kind == "value":
            self.n_value += 1
        else:
            self.n_value += 1
            self.n_grad += 1
        self.seconds += seconds
        if self.stream is not None:
            self.stream.write(json.dumps({"event": kind, "seconds": seconds, **extra}) + "\n")


class SAAProblem:
    """Objective ``phi_N`` and its gradient from per-sample observation Gramians.

    ``method`` selects dense ``d x d`` algebra or the equivalent small-core
    algebra on the low-rank factors (``auto`` picks the factors when every
    sample has them and they are smaller than ``d``).
    """

    def __init__(self, gramians, noise, s, r, forward_ops=None, method="auto"):
        if len(gramians) == 0:
            raise InvalidParameterError("SAAProblem needs at least one sample")
        self.gramians = list(gramians)
        self.noise = noise if isinstance(noise, NoiseModel) else NoiseModel(float(noise))
        self.s, self.r = int(s), int(r)
        self.d = self.s * self.r
        for g in self.gramians:
            if g.d != self.d:
                raise DimensionError(f"gramian dimension {g.d} != s*r = {self.d}")
        self.forward_ops = forward_ops
        if method == "auto":
            method = "factored" if all(
                g.factored and g.C.shape[0] < self.d for g in self.gramians
            ) else "dense"
        if method not in ("dense", "factored"):
            raise InvalidParameterError(f"unknown method {method!r}")
        self.method = method
        self.stats = EvalStats()

    @property
    def N(self):
        return len(self.gramians)

    def subset(self, indices):
        ops = None if self.forward_ops is None else [self.forward_ops[i] for i in indices]
        return SAAProblem([self.gramians[i] for i in indices], self.noise, self.s, self.r,
                          ops, self.method)

    def _check(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.s,):
            raise DimensionError(f"design has shape {w.shape}, expected ({self.s},)")
        return w

    def expand(self, w):
        """Diagonal of ``W`` (length ``d``)."""
        return np.tile(self._check(w), self.r)

    def s_matrix(self, i, w):
        wd = self.expand(w) * self.noise.precision
        return np.eye(self.d) + wd[:, None] * self.gramians[i].G

    # per-sample kernels ---------------------------------------------------

    def _dense_terms(self, i, wd, grad):
        g = self.gramians[i]
        S = np.eye(self.d) + wd[:, None] * g.G
        try:
            lu = la.lu_factor(S, check_finite=False)
        except (ValueError, la.LinAlgError) as exc:
            raise NumericalError(f"S_{i} factorization failed: {exc}") from exc
        value = np.trace(la.lu_solve(lu, wd[:, None] * g.H, check_finite=False))
        if not grad:
            return value, None
        X = la.lu_solve(lu, g.H, trans=1, check_finite=False).T  # H S^{-1}
        Y = la.lu_solve(lu, wd[:, None] * X, check_finite=False)  # S^{-1} W X
        diag = np.diag(X) - np.einsum("ij,ji->i", g.G, Y)
        return value, diag

    def _factored_terms(self, i, wd, grad):
        g = self.gramians[i]
        Z = g.Q.T @ (wd[:, None] * g.Q)
        k = Z.shape[0]
        if k == 0:
            return 0.0, (np.zeros(self.d) if grad else None)
        try:
            lu = la.lu_factor(np.eye(k) + g.C @ Z, check_finite=False)
        except (ValueError, la.LinAlgError) as exc:
            raise NumericalError(f"core factorization failed for sample {i}: {exc}") from exc
        RD = la.lu_solve(lu, g.D, check_finite=False)
        value = float(np.sum(RD * Z))
        if not grad:
            return value, None
        M = la.lu_solve(lu, RD.T, check_finite=False).T  # R D R^T
        diag = np.einsum("ij,ij->i", g.Q @ M, g.Q)
        return value, diag

    def _terms(self, i, w, grad):
        w = self._check(w)
        wd = np.tile(w, self.r) * self.noise.precision
        if self.method == "factored":
            return self._factored_terms(i, wd, grad)
        return self._dense_terms(i, wd, grad)

    # public API -----------------------------------------------------------

    def trace_update(self, i, w):
        """``tr K_i(w)``: the reduction of the posterior trace for sample ``i``."""
        return float(self._terms(i, w, False)[0])

    def phi_n(self, w):
        t = time.perf_counter()
        val = -np.mean([self._terms(i, w, False)[0] for i in range(self.N)])
        self.stats.record("value", time.perf_counter() - t)
        return float(val)

    def value_and_grad(self, w):
        t = time.perf_counter()
        total, gdiag = 0.0, np.zeros(self.d)
        for i in range(self.N):
            v, dg = self._terms(i, w, True)
            total += v
            gdiag += dg
        value = -total / self.N
        grad = -self.noise.precision / self.N * gdiag.reshape(self.r, self.s).sum(axis=0)
        self.stats.record("grad", time.perf_counter() - t)
        return float(value), grad

    def grad_phi_n(self, w):
        return self.value_and_grad(w)[1]

    def per_sample_trace_updates(self, w):
        return np.array([self.trace_update(i, w) for i in range(self.N)])

    # validation mode: exact operators -------------------------------------

    def _exact(self, i, F_exact):
        if F_exact is not None:
            return F_exact
        if self.forward_ops is None:
            raise InvalidParameterError("validation needs an exact forward operator")
        return self.forward_ops[i]

    def _exact_blocks(self, F, prior, w):
        X = prior.apply_sqrt_cov(F.apply_transpose(np.eye(self.d)))  # A^{-1} F^T
        V = prior.apply_sqrt_cov(X)  # Gpr F^T
        wd = self.expand(w) * self.noise.precision
        S = np.eye(self.d) + wd[:, None] * (X.T @ X)
        return V, wd, la.lu_factor(S)

    def posterior_map(self, i, w, data, prior, F_exact=None):
        """MAP point via ``m_pr + Gpr F^T S^{-1} W sigma^-2 (data - F m_pr)``."""
        F = self._exact(i, F_exact)
        w = self._check(w)
        if not np.any(w):
            return prior.mean.copy()
        V, wd, lu = self._exact_blocks(F, prior, w)
        resid = np.asarray(data, dtype=float) - F.apply(prior.mean)
        return prior.mean + V @ la.lu_solve(lu, wd * resid)

    def pointwise_variance(self, i, w, prior, F_exact=None, max_n=5000):
        """Diagonal of the posterior covariance."""
        if prior.n > max_n:
            raise InvalidParameterError(f"n={prior.n} exceeds the variance guard {max_n}")
        F = self._exact(i, F_exact)
        w = self._check(w)
        base = prior.diag_cov()
        if not np.any(w):
            return base
        V, wd, lu = self._exact_blocks(F, prior, w)
        T = la.lu_solve(lu, wd[:, None] * V.T)
        return base - np.einsum("ij,ji->i", V, T)


def s_matrix(p, i, w):
    return p.s_matrix(i, w)


def trace_update(p, i, w):
    return p.trace_update(i, w)


def phi_n(p, w):
    return p.phi_n(w)


def grad_phi_n(p, w):
    return p.grad_phi_n(w)


def posterior_map(p, i, w, data, prior, F_exact=None):
    return p.posterior_map(i, w, data, prior, F_exact)


def pointwise_variance(p, i, w, prior, F_exact=None):
    return p.pointwise_variance(i, w, prior, F_exact)
