"""Schrödinger generators for local plus jump perturbations, and gauges.

The perturbed generator scales the off-diagonal rates by e^{F} and shifts
the diagonal by the measure density, so its semigroup is the exponential
functional transform of the chain semigroup.  The gauge function solves the
killed-mass balance equation; its finiteness is decided by the sign of the
principal eigenvalue of the symmetrized operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import DENSE_EIG_LIMIT, SymmetricChain, generator
from .errors import (NoLifetimeError, NotGaugeableError, ValidationError)
from .measures import SmoothMeasure, jump_measure_of_F

# Principal eigenvalues within this distance of zero are reported marginal:
# the gauge dichotomy is sharp in theory, ill-conditioned numerically.
GAUGE_TOL = 1e-10
MARGINAL_BAND = 1e-8

SUPER_GAUGE_CAP = 10.0
SUPER_GAUGE_ITERS = 40


@dataclass(frozen=True)
class JumpPerturbation:
    """Bounded symmetric jump weight with zero diagonal.

    Dense array for desk-scale chains; a CSR matrix sharing the sparsity
    pattern of the chain rates is accepted for large models.
    """

    F: np.ndarray | sp.csr_matrix

    def __post_init__(self):
        F = self.F
        if sp.issparse(F):
            F = F.tocsr().astype(float)
            if F.diagonal().any():
                raise ValidationError("F must vanish on the diagonal")
            if abs(F - F.T).nnz and abs(F - F.T).max() > 0.0:
                raise ValidationError("F must be symmetric")
        else:
            F = np.ascontiguousarray(F, dtype=float)
            if F.ndim != 2 or F.shape[0] != F.shape[1]:
                raise ValidationError("F must be square")
            if np.any(np.diag(F) != 0.0):
                raise ValidationError("F must vanish on the diagonal")
            if not np.array_equal(F, F.T):
                raise ValidationError("F must be symmetric")
            if not np.all(np.isfinite(F)):
                raise ValidationError("F must be bounded")
            F.flags.writeable = False
        object.__setattr__(self, "F", F)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.F)

    def scaled(self, factor: float) -> "JumpPerturbation":
        return JumpPerturbation(self.F * factor)

    def abs(self) -> "JumpPerturbation":
        return JumpPerturbation(abs(self.F) if self.is_sparse else np.abs(self.F))

    @staticmethod
    def zero(n: int) -> "JumpPerturbation":
        return JumpPerturbation(np.zeros((n, n)))

    @staticmethod
    def from_edges(chain: SymmetricChain, entries) -> "JumpPerturbation":
        """Build from [[x, y, value], ...]; the mirror entry is filled in."""
        if chain.is_sparse:
            coo = chain.q.tocoo()
            F = sp.csr_matrix((np.zeros_like(coo.data), (coo.row, coo.col)),
                              shape=(chain.n, chain.n)).tolil()
            for x, y, v in entries:
                F[int(x), int(y)] = float(v)
                F[int(y), int(x)] = float(v)
            return JumpPerturbation(F.tocsr())
        F = np.zeros((chain.n, chain.n))
        for x, y, v in entries:
            F[int(x), int(y)] = float(v)
            F[int(y), int(x)] = float(v)
        return JumpPerturbation(F)


@dataclass
class SchrodingerOperator:
    """Matrix of the perturbed generator with its symmetrization data."""

    A: np.ndarray | sp.csr_matrix
    m: np.ndarray
    chain: SymmetricChain
    mu: SmoothMeasure
    F: JumpPerturbation
    _eig: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.m.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.A)

    def symmetrized(self) -> np.ndarray | sp.csr_matrix:
        s = np.sqrt(self.m)
        if self.is_sparse:
            S = sp.diags(s) @ self.A @ sp.diags(1.0 / s)
            return (S + S.T).multiply(0.5).tocsr()
        S = (s[:, None] * self.A) / s[None, :]
        return 0.5 * (S + S.T)

    def eig(self):
        if self._eig is None:
            if self.is_sparse or self.n > DENSE_EIG_LIMIT:
                raise ValidationError(
                    f"dense eigendecomposition unavailable for n={self.n}")
            w, V = np.linalg.eigh(self.symmetrized())
            self._eig = (w, V)
        return self._eig


def schrodinger_generator(chain: SymmetricChain, mu: SmoothMeasure,
                          F: JumpPerturbation) -> SchrodingerOperator:
    """Generator with off-diagonal q e^{F} and diagonal shifted by mu/m."""
    if F.n != chain.n or mu.n != chain.n:
        raise ValidationError("mu and F must match the chain size")
    gen = generator(chain)
    if chain.is_sparse:
        if not F.is_sparse:
            raise ValidationError("sparse chains need a sparse F on the rate pattern")
        coo = chain.q.tocoo()
        fvals = np.asarray(F.F.tocsr()[coo.row, coo.col]).ravel()
        off = sp.csr_matrix((coo.data * np.exp(fvals), (coo.row, coo.col)),
                            shape=(chain.n, chain.n))
        row = np.asarray(chain.q.sum(axis=1)).ravel()
        A = (off + sp.diags(-(row + chain.k) + mu.atoms / chain.m)).tocsr()
    else:
        Fd = F.F.toarray() if F.is_sparse else F.F
        A = chain.q * np.exp(Fd)
        np.fill_diagonal(A, np.diag(gen.Q) + mu.atoms / chain.m)
    return SchrodingerOperator(A=A, m=chain.m, chain=chain, mu=mu, F=F)


def _apply_eig(op: SchrodingerOperator, phi, f):
    w, V = op.eig()
    s = np.sqrt(op.m)
    return (V @ (phi(w) * (V.T @ (s * f)))) / s


def fk_semigroup_apply(op: SchrodingerOperator, t: float, f) -> np.ndarray:
    """e^{tA} f, the exponential-functional transform of the semigroup."""
    if t < 0:
        raise ValidationError("semigroup time must be nonnegative")
    f = np.asarray(f, dtype=float)
    if t == 0.0:
        return f.copy()
    if op.is_sparse or op.n > DENSE_EIG_LIMIT:
        return spla.expm_multiply(op.A * t, f)
    return _apply_eig(op, lambda w: np.exp(t * w), f)


def fk_time_integral(op: SchrodingerOperator, t: float, f) -> np.ndarray:
    """(int_0^t e^{sA} ds) f through the spectral calculus."""
    f = np.asarray(f, dtype=float)
    if t == 0.0:
        return np.zeros_like(f)

    def phi(w):
        z = t * w
        out = np.empty_like(w)
        small = np.abs(z) < 1e-8
        out[small] = t * (1.0 + 0.5 * z[small])
        ws = np.where(small, 1.0, w)
        out[~small] = np.expm1(z[~small]) / ws[~small]
        return out

    return _apply_eig(op, phi, f)


@dataclass
class GaugeResult:
    g: np.ndarray
    gaugeable: bool
    lambda_min: float
    marginal: bool

    def __iter__(self):
        yield self.g
        yield self.gaugeable


def gauge_function(chain: SymmetricChain, mu: SmoothMeasure,
                   F: JumpPerturbation) -> GaugeResult:
    """Expected exponential functional at the lifetime, with its finiteness flag.

    Finite (the chain is gaugeable) exactly when the principal eigenvalue of
    the symmetrized negated operator exceeds the gauge tolerance; the gauge
    then solves (-A) g = k through the positive-definite symmetrized system,
    with two steps of iterative refinement to pin the residual down.
    """
    if chain.is_conservative:
        raise NoLifetimeError("no lifetime: conservative chain; take an alpha-subprocess")
    op = schrodinger_generator(chain, mu, F)
    if op.is_sparse:
        raise ValidationError("gauge solve is dense-only")
    w, V = op.eig()
    lam_min = float(-w[-1])
    marginal = abs(lam_min) < MARGINAL_BAND
    if lam_min <= GAUGE_TOL:
        return GaugeResult(g=np.full(chain.n, np.inf), gaugeable=False,
                           lambda_min=lam_min, marginal=marginal)
    s = np.sqrt(chain.m)
    neg_sym = -op.symmetrized()
    cho = sla.cho_factor(neg_sym)
    rhs = s * chain.k
    h = sla.cho_solve(cho, rhs)
    for _ in range(2):
        h = h + sla.cho_solve(cho, rhs - neg_sym @ h)
    return GaugeResult(g=h / s, gaugeable=True, lambda_min=lam_min, marginal=marginal)


def _inflate(mu: SmoothMeasure, F: JumpPerturbation, eps: float):
    mu_eps = SmoothMeasure(mu.atoms + eps * np.abs(mu.atoms))
    if F.is_sparse:
        F_eps = JumpPerturbation(F.F + abs(F.F) * eps)
    else:
        F_eps = JumpPerturbation(F.F + eps * np.abs(F.F))
    return mu_eps, F_eps


def super_gauge_margin(chain: SymmetricChain, mu: SmoothMeasure,
                       F: JumpPerturbation) -> float:
    """Largest total-variation inflation that keeps the pair gaugeable.

    Bisection on [0, 10]; the predicate is monotone because inflating the
    measure and the jump weight can only raise the principal eigenvalue of A.
    """
    if not gauge_function(chain, mu, F).gaugeable:
        raise NotGaugeableError("input pair is not gaugeable")

    def ok(eps):
        mu_e, F_e = _inflate(mu, F, eps)
        return gauge_function(chain, mu_e, F_e).gaugeable

    if ok(SUPER_GAUGE_CAP):
        return SUPER_GAUGE_CAP
    lo, hi = 0.0, SUPER_GAUGE_CAP
    for _ in range(SUPER_GAUGE_ITERS):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def exponential_lifetime_moment(chain: SymmetricChain, F: JumpPerturbation,
                                p: float) -> np.ndarray:
    """p-th moment of the exponential jump martingale at the lifetime.

    The p-th power is again an exponential functional, with jump weight pF
    and continuous compensator -p times the jump compensator measure, so the
    moment is the gauge of that pair.  p = 1 returns the all-ones vector:
    the martingale closes at the lifetime.
    """
    if p < 1.0:
        raise ValidationError("moment order p must be >= 1")
    nu_F = jump_measure_of_F(chain, F, weight="exp_minus_one")
    mu_p = SmoothMeasure(-p * nu_F.atoms)
    res = gauge_function(chain, mu_p, F.scaled(p))
    if not res.gaugeable:
        raise NotGaugeableError(f"moment infinite at p={p}")
    return res.g
