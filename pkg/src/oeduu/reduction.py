"""Composite randomized range finder, clustering and reduced forward models.

All operators here are the prior-preconditioned maps ``F A^{-1}``; since the
prior square root ``A^{-1}`` is symmetric, the adjoint is ``A^{-1} F^T``.
"""

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .errors import InvalidParameterError

log = logging.getLogger(__name__)


class PreconditionedOperator:
    """``F Gamma_pr^{1/2}`` and its transpose, built from ``F`` and the prior."""

    def __init__(self, forward, prior):
        self.forward = forward
        self.prior = prior

    @property
    def shape(self):
        return self.forward.shape

    def apply(self, m):
        return self.forward.apply(self.prior.apply_sqrt_cov(m))

    def apply_transpose(self, d):
        return self.prior.apply_sqrt_cov(self.forward.apply_transpose(d))


class MatrixOperator:
    """Dense matrix with the operator interface (synthetic problems, oracles)."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, m):
        return self.matrix @ m

    def apply_transpose(self, d):
        return self.matrix.T @ d


def _precondition(samples, prior):
    if prior is None:
        return list(samples)
    return [PreconditionedOperator(F, prior) for F in samples]


@dataclass
class SketchSet:
    """Per-sample range and co-range sketches with their Gaussian test matrices."""

    Y: list
    Yhat: list
    seeds: list
    r_sketch: int
    omega: list = field(default=None, repr=False)
    omega_hat: list = field(default=None, repr=False)

    def subset(self, idx):
        pick = lambda xs: None if xs is None else [xs[i] for i in idx]
        return SketchSet(pick(self.Y), pick(self.Yhat), pick(self.seeds), self.r_sketch,
                         pick(self.omega), pick(self.omega_hat))

    def test_matrices(self, i, n, d):
        """Regenerate ``(Omega_i, Omegahat_i)`` of shapes ``(n, r)`` and ``(d, r)``."""
        if self.omega is not None:
            return self.omega[i], self.omega_hat[i]
        rng = np.random.default_rng(np.random.SeedSequence(self.seeds[i]))
        return rng.standard_normal((n, self.r_sketch)), rng.standard_normal((d, self.r_sketch))


def _sketch_one(op, r_sketch, entropy):
    d, n = op.shape
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    omega = rng.standard_normal((n, r_sketch))
    omega_hat = rng.standard_normal((d, r_sketch))
    return np.asarray(op.apply(omega)), np.asarray(op.apply_transpose(omega_hat)), omega, omega_hat


def sketch(operators, r_sketch, seed, workers=1):
    """Range sketches ``Y_i = F_i Omega_i`` and ``Yhat_i = F_i^T Omegahat_i``.

    Operator ``i`` uses the seed entropy ``(*seed, i)``.
    """
    if r_sketch < 1:
        raise InvalidParameterError("r_sketch must be >= 1")
    seeds = [[*np.atleast_1d(seed).tolist(), i] for i in range(len(operators))]
    jobs = [(op, r_sketch, e) for op, e in zip(operators, seeds)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(lambda a: _sketch_one(*a), jobs))
    else:
        out = [_sketch_one(*a) for a in jobs]
    Y, Yhat, om, omh = (list(t) for t in zip(*out)) if out else ([], [], [], [])
    return SketchSet(Y, Yhat, seeds, r_sketch, om, omh)


def truncation_index(sv, mu, rule="standard"):
    """Number of retained directions for relative tolerance ``mu``.

    ``standard`` keeps every direction with ``sigma_j / sigma_1 > mu``.
    ``literal`` returns the largest (1-based) index with ``sigma_j / sigma_1 <= mu``,
    or all directions when none qualifies.
    """
    sv = np.asarray(sv)
    if sv.size == 0 or sv[0] == 0:
        return 0
    ratio = sv / sv[0]
    if rule == "standard":
        return int(np.count_nonzero(ratio > mu))
    if rule == "literal":
        hits = np.flatnonzero(ratio <= mu)
        return int(hits[-1] + 1) if hits.size else int(sv.size)
    raise InvalidParameterError(f"unknown truncation rule {rule!r}")


@dataclass
class CRFResult:
    Q: np.ndarray
    Qhat: np.ndarray
    sv: np.ndarray
    sv_hat: np.ndarray
    sketches: SketchSet
    mu: float

    @property
    def k(self):
        return self.Q.shape[1]


def crf_from_sketches(sketches, mu, rule="standard", independent_k=False):
    if not 0 < mu < 1:
        raise InvalidParameterError(f"mu must lie in (0, 1), got {mu}")
    U, sv, _ = la.svd(np.hstack(sketches.Y), full_matrices=False)
    Uh, svh, _ = la.svd(np.hstack(sketches.Yhat), full_matrices=False)
    k_obs = truncation_index(sv, mu, rule)
    k_par = truncation_index(svh, mu, rule)
    if independent_k:
        kq, kh = k_obs, k_par
    else:
        kq = kh = min(max(k_obs, k_par), U.shape[1], Uh.shape[1])
    return CRFResult(U[:, :kq], Uh[:, :kh], sv, svh, sketches, mu)


def crf(samples, prior, mu, r_sketch=40, seed=0, rule="standard", independent_k=False):
    """Composite randomized range finder over a family of forward operators.

    ``prior=None`` treats ``samples`` as already preconditioned operators.
    """
    if not 0 < mu < 1:
        raise InvalidParameterError(f"mu must lie in (0, 1), got {mu}")
    if len(samples) == 0:
        raise InvalidParameterError("crf needs at least one sample")
    ops = _precondition(samples, prior)
    return crf_from_sketches(sketch(ops, r_sketch, seed), mu, rule, independent_k)


def inner_matrix(F, prior, Q, Qhat):
    """Two-pass core ``Q^T F~ Qhat`` by ``k`` preconditioned forward applications."""
    if Qhat.shape[1] == 0 or Q.shape[1] == 0:
        return np.zeros((Q.shape[1], Qhat.shape[1]))
    op = F if prior is None else PreconditionedOperator(F, prior)
    return Q.T @ op.apply(Qhat)


def single_pass_residuals(B, Y, Yhat, omega, omega_hat, Q, Qhat):
    r1 = np.linalg.norm(B @ (Qhat.T @ omega) - Q.T @ Y)
    r2 = np.linalg.norm(B.T @ (Q.T @ omega_hat) - Qhat.T @ Yhat)
    return r1, r2


def inner_matrix_single_pass(Y, Yhat, omega, omega_hat, Q, Qhat, rcond=1e-10):
    """Core matrix from the sketches alone.

    Minimizes ``||B X1 - Z1||^2 + ||B^T X2 - Z2||^2`` with ``X1 = Qhat^T Omega``,
    ``Z1 = Q^T Y``, ``X2 = Q^T Omegahat``, ``Z2 = Qhat^T Yhat``.  The normal
    equations are the Sylvester equation ``X2 X2^T B + B X1 X1^T = Z1 X1^T + X2 Z2^T``.
    """
    kq, kh = Q.shape[1], Qhat.shape[1]
    if kq == 0 or kh == 0:
        return np.zeros((kq, kh))
    X1, Z1 = Qhat.T @ omega, Q.T @ Y
    X2, Z2 = Q.T @ omega_hat, Qhat.T @ Yhat
    a = X2 @ X2.T
    b = X1 @ X1.T
    rhs = Z1 @ X1.T + X2 @ Z2.T
    lo = np.linalg.eigvalsh(a)[0] + np.linalg.eigvalsh(b)[0]
    scale = max(np.linalg.norm(a, 2), np.linalg.norm(b, 2), 1e-300)
    if lo <= rcond * scale:
        warnings.warn(
            "single-pass least-squares system is rank deficient; using a ridge-regularized solve",
            RuntimeWarning,
            stacklevel=2,
        )
        lam = rcond * scale
        a = a + lam * np.eye(kq)
        b = b + lam * np.eye(kh)
    return la.solve_sylvester(a, b, rhs)


@dataclass
class Clustering:
    assignments: np.ndarray
    centroids: np.ndarray
    m_probe: np.ndarray
    iterations: int

    @property
    def l(self):
        return self.centroids.shape[0]

    def members(self, p):
        return np.flatnonzero(self.assignments == p)


def kmeans(points, l, seed=0, max_iter=100):
    """Lloyd iterations with k-means++ seeding; ties go to the lowest cluster index."""
    X = np.asarray(points, dtype=float)
    N = X.shape[0]
    if l > N or l < 1:
        raise InvalidParameterError(f"cannot form {l} clusters from {N} points")
    rng = np.random.default_rng(seed)
    centers = [X[rng.integers(N)]]
    for _ in range(1, l):
        d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        if d2.sum() == 0:
            centers.append(X[rng.integers(N)])
        else:
            centers.append(X[rng.choice(N, p=d2 / d2.sum())])
    C = np.array(centers)
    assign = None
    it = 0
    for it in range(1, max_iter + 1):
        dist = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        new = np.argmin(dist, axis=1)  # argmin picks the first (lowest) index on ties
        for p in range(l):
            if not np.any(new == p):
                # reseed the empty cluster from the point farthest from its center
                far = int(np.argmax(dist[np.arange(N), new]))
                new[far] = p
                dist[far] = ((X[far] - C) ** 2).sum(-1)
        C = np.array([X[new == p].mean(axis=0) for p in range(l)])
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
    return new, C, it


def cluster_samples(samples, m_probe, l, seed=0):
    """k-means over the synthetic observations ``F_i m_probe``."""
    m_probe = np.asarray(m_probe, dtype=float)
    if not np.any(m_probe):
        raise InvalidParameterError("m_probe must be nonzero")
    if l > len(samples):
        raise InvalidParameterError(f"l={l} exceeds the number of samples {len(samples)}")
    obs = np.array([F.apply(m_probe) for F in samples])
    assign, C, it = kmeans(obs, l, seed)
    return Clustering(assign, C, m_probe, it)


@dataclass
class ReducedForward:
    """Surrogate ``F~ ~= Q B Qhat^T`` of one prior-preconditioned forward map."""

    Q: np.ndarray
    Qhat: np.ndarray
    B: np.ndarray
    cluster_id: int

    @property
    def k(self):
        return self.B.shape[0]

    def apply(self, m):
        return self.Q @ (self.B @ (self.Qhat.T @ m))

    def apply_transpose(self, d):
        return self.Qhat @ (self.B.T @ (self.Q.T @ d))


@dataclass
class ObservationGramians:
    """``G = F Gpr F^T`` and ``H = F Gpr^2 F^T``, optionally with low-rank factors.

    When ``Q`` is set, ``G = Q C Q^T`` and ``H = Q D Q^T`` with small ``C, D``.
    """

    G: np.ndarray
    H: np.ndarray
    Q: np.ndarray = None
    C: np.ndarray = None
    D: np.ndarray = None

    @property
    def d(self):
        return self.G.shape[0]

    @property
    def factored(self):
        return self.Q is not None


def _sym(X):
    return 0.5 * (X + X.T)


def prior_gram(prior, Qhat):
    """``Qhat^T Gpr Qhat`` (``k`` pairs of prior solves)."""
    if Qhat.shape[1] == 0:
        return np.zeros((0, 0))
    return _sym(Qhat.T @ prior.apply_cov(Qhat))


def gramians(rf, prior, Qhat_prior_gram=None):
    if Qhat_prior_gram is None:
        Qhat_prior_gram = prior_gram(prior, rf.Qhat)
    C = _sym(rf.B @ rf.B.T)
    D = _sym(rf.B @ Qhat_prior_gram @ rf.B.T)
    G = _sym(rf.Q @ C @ rf.Q.T)
    H = _sym(rf.Q @ D @ rf.Q.T)
    return ObservationGramians(G, H, rf.Q, C, D)


def exact_gramians(F, prior):
    """Gramians from full PDE solves: ``d`` adjoint sweeps plus prior solves."""
    X = prior.apply_sqrt_cov(F.apply_transpose(np.eye(F.d)))  # F~^T, n x d
    G = _sym(X.T @ X)
    H = _sym(X.T @ prior.apply_cov(X))
    return ObservationGramians(G, H)


@dataclass
class ReducedModelSet:
    models: list
    clustering: Clustering
    bases: list  # per-cluster CRFResult
    prior_grams: list
    mu: float
    mode: str

    @property
    def basis_sizes(self):
        return [b.k for b in self.bases]

    def gramians(self):
        return [
            gramians(rf, None, self.prior_grams[rf.cluster_id]) for rf in self.models
        ]


def build_reduced_models(samples, prior, mu, l=1, m_probe=None, mode="two-pass", seed=0,
                         r_sketch=40, rule="standard", clustering=None, sketches=None,
                         workers=1):
    """Cluster, build per-cluster composite bases, then per-sample core matrices.

    Sample ``i`` is sketched with its own seed ``(seed, i)``, so the per-cluster
    bases are SVDs of subsets of one shared sketch set; pass ``sketches`` to
    reuse it across tolerances.
    """
    if mode not in ("two-pass", "single-pass"):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    N = len(samples)
    if N == 0:
        raise InvalidParameterError("need at least one sample")
    if clustering is None:
        if l == 1:
            clustering = Clustering(np.zeros(N, dtype=int), np.zeros((1, 0)), m_probe, 0)
        else:
            if m_probe is None:
                raise InvalidParameterError("clustering with l > 1 needs m_probe")
            clustering = cluster_samples(samples, m_probe, l, seed)
    if sketches is None:
        sketches = sketch(_precondition(samples, prior), r_sketch, seed, workers)
    bases, grams = [], []
    models = [None] * N
    for p in range(clustering.l):
        idx = clustering.members(p)
        sub = sketches.subset(idx)
        res = crf_from_sketches(sub, mu, rule)
        log.info("cluster %d: %d samples, k=%d", p, idx.size, res.k)
        bases.append(res)
        grams.append(prior_gram(prior, res.Qhat))
        for local, i in enumerate(idx):
            if mode == "two-pass":
                B = inner_matrix(samples[i], prior, res.Q, res.Qhat)
            else:
                B = inner_matrix_single_pass(
                    sub.Y[local], sub.Yhat[local], sub.omega[local], sub.omega_hat[local],
                    res.Q, res.Qhat,
                )
            models[i] = ReducedForward(res.Q, res.Qhat, B, p)
    return ReducedModelSet(models, clustering, bases, grams, mu, mode)


def save_reduced_models(rms, directory, extra=None):
    """CSV matrices plus ``manifest.json``; returns the list of written files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, X):
        np.savetxt(directory / name, np.atleast_2d(X) if X.size else X.reshape(0, 0),
                   fmt="%.17g", delimiter=",")
        written.append(name)

    for p, (base, gram) in enumerate(zip(rms.bases, rms.prior_grams)):
        put(f"cluster{p}_Q.csv", base.Q)
        put(f"cluster{p}_Qhat.csv", base.Qhat)
        put(f"cluster{p}_prior_gram.csv", gram)
        put(f"cluster{p}_sv.csv", base.sv[:, None])
        put(f"cluster{p}_sv_hat.csv", base.sv_hat[:, None])
    for i, rf in enumerate(rms.models):
        put(f"sample{i}_B.csv", rf.B)
    manifest = {
        "mu": rms.mu,
        "mode": rms.mode,
        "n_samples": len(rms.models),
        "n_clusters": rms.clustering.l,
        "basis_sizes": rms.basis_sizes,
        "cluster_ids": [int(c) for c in rms.clustering.assignments],
        "d": int(rms.bases[0].Q.shape[0]),
        "n": int(rms.bases[0].Qhat.shape[0]),
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    written.append("manifest.json")
    return written


def _load(path, rows):
    X = np.loadtxt(path, delimiter=",", ndmin=2)
    return X.reshape(rows, -1) if X.size else np.zeros((rows, 0))


def load_reduced_models(directory):
    """Read back an archive as ``(manifest, models, prior_grams)``."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    d, n = manifest["d"], manifest["n"]
    Qs, Qhs, grams = [], [], []
    for p, k in enumerate(manifest["basis_sizes"]):
        Qs.append(_load(directory / f"cluster{p}_Q.csv", d))
        Qhs.append(_load(directory / f"cluster{p}_Qhat.csv", n))
        grams.append(_load(directory / f"cluster{p}_prior_gram.csv", k).reshape(k, k))
    models = []
    for i, c in enumerate(manifest["cluster_ids"]):
        k = manifest["basis_sizes"][c]
        B = _load(directory / f"sample{i}_B.csv", k).reshape(k, k)
        models.append(ReducedForward(Qs[c], Qhs[c], B, c))
    return manifest, models, grams
