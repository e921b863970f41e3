"""Finite-state symmetric Markov chains with killing.

A chain is the triple (m, q, k): strictly positive symmetrizing masses m,
nonnegative off-diagonal jump rates q in detailed balance with m, and
nonnegative killing rates k.  The generator Q has q off the diagonal and
-(sum_y q[x][y] + k[x]) on it, so row sums equal -k exactly.  Everything
downstream (semigroups, Green operators, Dirichlet energy) is exact linear
algebra on Q; D^{1/2} Q D^{-1/2} with D = diag(m) is symmetric, which is
what makes dense eigendecomposition the workhorse.

Chains are immutable after construction; all functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import NotTransientError, ValidationError

# Dense eigendecomposition up to this size; sparse action above.
DENSE_EIG_LIMIT = 5000

# Relative tolerance on detailed balance m[x] q[x][y] = m[y] q[y][x].
DETAILED_BALANCE_RTOL = 1e-12


@dataclass(frozen=True)
class SymmetricChain:
    """An m-symmetric irreducible chain with killing rates k.

    ``q`` may be a dense array or a CSR matrix; large models (truncated
    trees, stable-like grids) stay sparse end to end.
    """

    m: np.ndarray
    q: np.ndarray | sp.csr_matrix
    k: np.ndarray

    @property
    def n(self) -> int:
        return self.m.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.q)

    @property
    def is_conservative(self) -> bool:
        return not np.any(self.k > 0.0)

    @property
    def is_transient(self) -> bool:
        # Connected + some killing <=> -Q is a nonsingular M-matrix.
        return bool(np.any(self.k > 0.0))

    def q_dense(self) -> np.ndarray:
        return self.q.toarray() if self.is_sparse else self.q

    def total_rates(self) -> np.ndarray:
        """Total event rate per state: sum_y q[x][y] + k[x]."""
        if self.is_sparse:
            row = np.asarray(self.q.sum(axis=1)).ravel()
        else:
            row = self.q.sum(axis=1)
        return row + self.k


def _check_chain(m, q, k) -> None:
    n = m.shape[0]
    if np.any(m <= 0.0) or not np.all(np.isfinite(m)):
        raise ValidationError("symmetrizing masses m must be strictly positive")
    if np.any(k < 0.0) or not np.all(np.isfinite(k)):
        raise ValidationError("killing rates k must be nonnegative")
    if sp.issparse(q):
        if q.diagonal().any():
            raise ValidationError("rate matrix q must have zero diagonal")
        if q.nnz and (q.data < 0.0).any():
            raise ValidationError("jump rates q must be nonnegative")
    else:
        if np.any(np.diag(q) != 0.0):
            raise ValidationError("rate matrix q must have zero diagonal")
        if np.any(q < 0.0) or not np.all(np.isfinite(q)):
            raise ValidationError("jump rates q must be nonnegative")
    ncomp, _ = connected_components(sp.csr_matrix(q) if not sp.issparse(q) else q,
                                    directed=False)
    if n > 1 and ncomp != 1:
        raise ValidationError(
            f"support graph of q has {ncomp} components; chains must be irreducible")


def make_chain(m, q, k, symmetrize: bool = False) -> SymmetricChain:
    """Validate (m, q, k) and return an immutable chain.

    Detailed balance is checked to relative tolerance 1e-12.  Inputs that
    violate it are rejected unless ``symmetrize`` is set, in which case
    q[x][y] <- (m[x] q[x][y] + m[y] q[y][x]) / (2 m[x]).
    """
    m = np.ascontiguousarray(m, dtype=float)
    k = np.ascontiguousarray(k, dtype=float)
    if sp.issparse(q):
        q = q.tocsr().astype(float)
    else:
        q = np.ascontiguousarray(q, dtype=float)

    if sp.issparse(q):
        flux = sp.diags(m) @ q
        gap = abs(flux - flux.T)
        scale = max(abs(flux).max(), 1e-300) if flux.nnz else 1.0
        balanced = gap.nnz == 0 or gap.max() <= DETAILED_BALANCE_RTOL * scale
        if not balanced:
            if not symmetrize:
                raise ValidationError("detailed balance violated; pass symmetrize=True to repair")
            q = (flux + flux.T).multiply(0.5)
            q = sp.diags(1.0 / m) @ q
            q = q.tocsr()
    else:
        flux = m[:, None] * q
        gap = np.abs(flux - flux.T)
        scale = max(flux.max(), 1e-300)
        if gap.max() > DETAILED_BALANCE_RTOL * scale:
            if not symmetrize:
                raise ValidationError("detailed balance violated; pass symmetrize=True to repair")
            q = 0.5 * (flux + flux.T) / m[:, None]
            np.fill_diagonal(q, 0.0)

    _check_chain(m, q, k)
    if not sp.issparse(q):
        for arr in (m, q, k):
            arr.flags.writeable = False
    else:
        m.flags.writeable = False
        k.flags.writeable = False
    return SymmetricChain(m=m, q=q, k=k)


# ---------------------------------------------------------------------------
# Built-in model families
# ---------------------------------------------------------------------------

def _path_chain(n, rate=1.0, boundary="dirichlet"):
    if n < 2:
        raise ValidationError("path model needs n >= 2")
    q = np.zeros((n, n))
    for i in range(n - 1):
        q[i, i + 1] = q[i + 1, i] = rate
    k = np.zeros(n)
    if boundary == "dirichlet":
        # severed edge to each phantom neighbour outside the segment
        k[0] = k[-1] = rate
    elif boundary != "reflecting":
        raise ValidationError(f"unknown path boundary {boundary!r}")
    return make_chain(np.ones(n), q, k)


def _torus_chain(n, rate=1.0):
    if n < 2:
        raise ValidationError("torus model needs n >= 2")
    q = np.zeros((n, n))
    for i in range(n):
        q[i, (i + 1) % n] += rate
        q[i, (i - 1) % n] += rate
    return make_chain(np.ones(n), q, np.zeros(n))


def _tree_chain(depth, degree=3, rate=None, boundary="dirichlet"):
    """Truncated degree-regular tree, BFS state order, root = 0.

    Default per-edge rate 1/degree gives unit total jump rate at interior
    vertices, the normalization under which the infinite-tree bottom of the
    spectrum is 1 - 2 sqrt(degree-1)/degree.
    """
    if depth < 1 or degree < 2:
        raise ValidationError("tree model needs depth >= 1 and degree >= 2")
    if rate is None:
        rate = 1.0 / degree
    rows, cols = [], []
    next_id = 1
    frontier = [0]
    for level in range(depth):
        fresh = []
        for v in frontier:
            nch = degree if level == 0 else degree - 1
            for _ in range(nch):
                rows.append(v)
                cols.append(next_id)
                fresh.append(next_id)
                next_id += 1
        frontier = fresh
    n = next_id
    data = np.full(2 * len(rows), rate)
    q = sp.csr_matrix((data, (rows + cols, cols + rows)), shape=(n, n))
    k = np.zeros(n)
    if boundary == "dirichlet":
        # each leaf loses degree-1 child edges to the truncation
        k[frontier] = (degree - 1) * rate
    elif boundary != "reflecting":
        raise ValidationError(f"unknown tree boundary {boundary!r}")
    if n <= DENSE_EIG_LIMIT:
        q = q.toarray()
    return make_chain(np.ones(n), q, k)


def _stable_grid_chain(n, alpha, c=1.0, radius=None, boundary="dirichlet"):
    """1-D lattice sites with kernel c / |x-y|^{1+alpha}, truncated at radius."""
    if n < 2 or alpha <= 0.0 or c <= 0.0:
        raise ValidationError("stable_grid model needs n >= 2, alpha > 0, c > 0")
    radius = n if radius is None else int(radius)
    if radius < 1:
        raise ValidationError("stable_grid radius must be >= 1")
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
    with np.errstate(divide="ignore"):
        q = np.where((dist >= 1) & (dist <= radius), c / dist ** (1.0 + alpha), 0.0)
    np.fill_diagonal(q, 0.0)
    k = np.zeros(n)
    if boundary == "dirichlet":
        # jumps that would exit the segment become killing
        for x in range(n):
            out = np.arange(x - radius, x + radius + 1)
            out = out[(out < 0) | (out >= n)]
            if out.size:
                k[x] = np.sum(c / np.abs(out - x).astype(float) ** (1.0 + alpha))
    elif boundary != "free":
        raise ValidationError(f"unknown stable_grid boundary {boundary!r}")
    return make_chain(np.ones(n), q, k)


def build_chain(spec: dict, symmetrize: bool = False) -> SymmetricChain:
    """Build a chain from a model-spec dictionary.

    ``spec["kind"]`` selects the family: "explicit" (m, q as coordinate
    triplets, k), "path", "torus", "tree", or "stable_grid".
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValidationError("model spec must be an object with a 'kind' field (at /kind)")
    kind = spec["kind"]
    try:
        if kind == "explicit":
            m = np.asarray(spec["m"], dtype=float)
            n = m.shape[0]
            q = np.zeros((n, n))
            for trip in spec["q"]:
                i, j, v = int(trip[0]), int(trip[1]), float(trip[2])
                if i == j:
                    raise ValidationError("explicit q triplet on the diagonal (at /q)")
                q[i, j] = v
            k = np.asarray(spec.get("k", np.zeros(n)), dtype=float)
            return make_chain(m, q, k, symmetrize=symmetrize)
        if kind == "path":
            return _path_chain(int(spec["n"]), float(spec.get("rate", 1.0)),
                               spec.get("boundary", "dirichlet"))
        if kind == "torus":
            return _torus_chain(int(spec["n"]), float(spec.get("rate", 1.0)))
        if kind == "tree":
            rate = spec.get("rate")
            return _tree_chain(int(spec["depth"]), int(spec.get("degree", 3)),
                               None if rate is None else float(rate),
                               spec.get("boundary", "dirichlet"))
        if kind == "stable_grid":
            return _stable_grid_chain(int(spec["n"]), float(spec["alpha"]),
                                      float(spec.get("c", 1.0)), spec.get("radius"),
                                      spec.get("boundary", "dirichlet"))
    except KeyError as exc:
        raise ValidationError(f"model spec missing field {exc} (at /{exc.args[0]})") from exc
    raise ValidationError(f"unknown model kind {kind!r} (at /kind)")


# ---------------------------------------------------------------------------
# Generator, semigroup, Green operator
# ---------------------------------------------------------------------------

@dataclass
class GeneratorMatrix:
    """Generator Q with killing folded into the diagonal.

    Lazily caches the eigendecomposition of the symmetrized matrix
    S = D^{1/2} Q D^{-1/2}; logically immutable.
    """

    Q: np.ndarray | sp.csr_matrix
    m: np.ndarray
    includes_killing: bool = True
    _eig: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.m.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.Q)

    def symmetrized(self) -> np.ndarray | sp.csr_matrix:
        s = np.sqrt(self.m)
        if self.is_sparse:
            S = sp.diags(s) @ self.Q @ sp.diags(1.0 / s)
            return (S + S.T).multiply(0.5).tocsr()
        S = (s[:, None] * self.Q) / s[None, :]
        return 0.5 * (S + S.T)

    def eig(self):
        """(w, V) of the symmetrized generator; dense models only."""
        if self._eig is None:
            if self.is_sparse or self.n > DENSE_EIG_LIMIT:
                raise ValidationError(
                    f"dense eigendecomposition unavailable for n={self.n}")
            w, V = np.linalg.eigh(self.symmetrized())
            self._eig = (w, V)
        return self._eig


def generator(chain: SymmetricChain) -> GeneratorMatrix:
    """Generator matrix of the chain, killing folded into the diagonal."""
    if chain.is_sparse:
        row = np.asarray(chain.q.sum(axis=1)).ravel()
        Q = (chain.q - sp.diags(row + chain.k)).tocsr()
    else:
        Q = chain.q.copy()
        np.fill_diagonal(Q, -(chain.q.sum(axis=1) + chain.k))
    return GeneratorMatrix(Q=Q, m=chain.m)


def _apply_eig(gen: GeneratorMatrix, phi, f):
    """D^{-1/2} V phi(w) V^T D^{1/2} f via the cached eigendecomposition."""
    w, V = gen.eig()
    s = np.sqrt(gen.m)
    return (V @ (phi(w) * (V.T @ (s * f)))) / s


def semigroup_apply(gen: GeneratorMatrix, t: float, f) -> np.ndarray:
    """e^{tQ} f, exact via eigendecomposition (dense) or Krylov action (sparse)."""
    if t < 0:
        raise ValidationError("semigroup time must be nonnegative")
    f = np.asarray(f, dtype=float)
    if t == 0.0:
        return f.copy()
    if gen.is_sparse or gen.n > DENSE_EIG_LIMIT:
        return spla.expm_multiply(gen.Q * t, f)
    return _apply_eig(gen, lambda w: np.exp(t * w), f)


def semigroup_time_integral(gen: GeneratorMatrix, t: float, f) -> np.ndarray:
    """(int_0^t e^{sQ} ds) f, exact through the spectral calculus."""
    if t < 0:
        raise ValidationError("integration horizon must be nonnegative")
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

    return _apply_eig(gen, phi, f)


@dataclass
class GreenOperator:
    """G_alpha = (alpha I - Q)^{-1}, entrywise nonnegative.

    ``matrix`` acts on functions; the kernel against m is
    G(x, y) = matrix[x][y] / m[y].
    """

    matrix: np.ndarray
    alpha: float
    m: np.ndarray

    def kernel(self) -> np.ndarray:
        return self.matrix / self.m[None, :]


def green(chain: SymmetricChain, alpha: float = 0.0) -> GreenOperator:
    """Green operator of the chain at rate alpha >= 0 (dense models)."""
    if alpha < 0:
        raise ValidationError("alpha must be nonnegative")
    if alpha == 0.0 and not chain.is_transient:
        raise NotTransientError("chain is not transient: Green operator at rate 0 is singular")
    gen = generator(chain)
    if gen.is_sparse:
        raise ValidationError("full Green matrix is dense-only; use green_apply for sparse chains")
    M = alpha * np.eye(chain.n) - gen.Q
    return GreenOperator(matrix=np.linalg.inv(M), alpha=alpha, m=chain.m)


def green_apply(chain: SymmetricChain, alpha: float, rhs) -> np.ndarray:
    """Solve (alpha I - Q) x = rhs without forming the inverse; sparse-aware."""
    if alpha < 0:
        raise ValidationError("alpha must be nonnegative")
    if alpha == 0.0 and not chain.is_transient:
        raise NotTransientError("chain is not transient: Green operator at rate 0 is singular")
    gen = generator(chain)
    rhs = np.asarray(rhs, dtype=float)
    if gen.is_sparse:
        M = (sp.identity(chain.n, format="csr") * alpha - gen.Q).tocsc()
        return spla.splu(M).solve(rhs)
    return np.linalg.solve(alpha * np.eye(chain.n) - gen.Q, rhs)


def alpha_subprocess(chain: SymmetricChain, alpha: float) -> SymmetricChain:
    """The chain with uniform extra killing at rate alpha."""
    if alpha < 0:
        raise ValidationError("alpha must be nonnegative")
    if alpha == 0.0:
        return chain
    return make_chain(chain.m, chain.q, chain.k + alpha)


def dirichlet_energy(chain: SymmetricChain, u) -> float:
    """Quadratic energy 1/2 sum m q (u_x - u_y)^2 + sum k m u^2."""
    u = np.asarray(u, dtype=float)
    if chain.is_sparse:
        coo = chain.q.tocoo()
        jump = 0.5 * np.sum(chain.m[coo.row] * coo.data * (u[coo.row] - u[coo.col]) ** 2)
    else:
        diff = u[:, None] - u[None, :]
        jump = 0.5 * np.sum(chain.m[:, None] * chain.q * diff ** 2)
    return float(jump + np.sum(chain.k * chain.m * u ** 2))


def energy_matrix(chain: SymmetricChain) -> np.ndarray:
    """Form matrix E = diag(m) (-Q), symmetric PSD; dense models only."""
    gen = generator(chain)
    if gen.is_sparse:
        raise ValidationError("energy matrix is dense-only")
    E = chain.m[:, None] * (-gen.Q)
    return 0.5 * (E + E.T)
