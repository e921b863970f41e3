"""Smooth measures, their potentials, and Kato-class diagnostics.

A signed measure is a vector of atoms over the states; the additive
functional it drives integrates (atoms / m) along the path.  The small-time
diagnostic, the beta_1 subset supremum, and the core-set certificate search
below are the finite-chain versions of the classical Kato smallness
conditions; on a finite chain every measure passes, so their value lies in
truncation sweeps where the certificates are tracked across sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import SymmetricChain, generator, green_apply, semigroup_apply, energy_matrix
from .errors import InvariantViolation, ValidationError

# Exhaustive subset search is exact up to this core-set size.
EXACT_SUBSET_LIMIT = 20

_GL_NODES = 48


@dataclass(frozen=True)
class SmoothMeasure:
    """Signed atom vector; atoms[x] is the mass of the measure at state x."""

    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.ascontiguousarray(self.atoms, dtype=float)
        atoms.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    def positive_part(self) -> "SmoothMeasure":
        return SmoothMeasure(np.maximum(self.atoms, 0.0))

    def negative_part(self) -> "SmoothMeasure":
        return SmoothMeasure(np.maximum(-self.atoms, 0.0))

    def total_variation(self) -> "SmoothMeasure":
        return SmoothMeasure(np.abs(self.atoms))

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.atoms >= 0.0))

    @staticmethod
    def zero(n: int) -> "SmoothMeasure":
        return SmoothMeasure(np.zeros(n))

    @staticmethod
    def delta(n: int, site: int, mass: float = 1.0) -> "SmoothMeasure":
        atoms = np.zeros(n)
        atoms[site] = mass
        return SmoothMeasure(atoms)


@dataclass
class KinfCertificate:
    """Core set K and threshold delta certifying the epsilon smallness bound."""

    K: list
    delta: float
    eps: float
    worst_value: float
    exact: bool


@dataclass
class Beta1Result:
    value: float
    exact: bool
    argmax: list


@dataclass
class KatoReport:
    """Class tags plus the certificates and sup-norms behind them."""

    in_K: bool
    in_K1: bool
    in_Kinf: bool
    beta1: float
    certificate: KinfCertificate | None
    potential_sup: float
    small_time: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "K": self.in_K,
            "K1": self.in_K1,
            "Kinf": self.in_Kinf,
            "beta1": self.beta1,
            "certificate": None if self.certificate is None else {
                "K": list(self.certificate.K),
                "delta": self.certificate.delta,
                "eps": self.certificate.eps,
                "worst_value": self.certificate.worst_value,
                "exact": self.certificate.exact,
            },
            "potential_sup": self.potential_sup,
            "small_time": self.small_time,
        }


def potential(chain: SymmetricChain, nu: SmoothMeasure, alpha: float = 0.0) -> np.ndarray:
    """G_alpha nu as a function of the start state.

    Equals E_x of the total additive-functional mass when alpha = 0.
    """
    if not nu.is_nonnegative():
        raise ValidationError("potential needs a nonnegative measure; pass the total variation")
    return green_apply(chain, alpha, nu.atoms / chain.m)


def kato_K_check(chain: SymmetricChain, nu: SmoothMeasure, t_grid) -> tuple[np.ndarray, bool]:
    """sup_x E_x[A_t] over a grid of small times, by Gauss-Legendre quadrature.

    Returns the per-time sup values and the verdict that they vanish
    linearly in t (always true on a finite chain).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    gen = generator(chain)
    dens = nu.total_variation().atoms / chain.m
    nodes, weights = np.polynomial.legendre.leggauss(_GL_NODES)
    values = np.empty(t_grid.shape[0])
    for i, t in enumerate(t_grid):
        s = 0.5 * t * (nodes + 1.0)
        acc = np.zeros(chain.n)
        for sj, wj in zip(s, weights):
            acc += wj * semigroup_apply(gen, sj, dens)
        values[i] = 0.5 * t * acc.max()
    slope = values / np.where(t_grid > 0, t_grid, 1.0)
    verdict = bool(np.all(values <= slope.max() * t_grid + 1e-12))
    return values, verdict


def _atom_columns(chain, nu, members):
    """Per-atom potential columns G(delta_b nu_b) for b in members."""
    rhs = np.zeros((chain.n, len(members)))
    for j, b in enumerate(members):
        rhs[b, j] = nu.atoms[b] / chain.m[b]
    if not members:
        return rhs
    return green_apply(chain, 0.0, rhs)


def _beta_exhaustive(base, cols, masses, delta):
    """Max of ||base + sum of chosen columns||_inf over subsets with mass < delta.

    The objective is monotone in the subset, so only maximal admissible
    subsets are evaluated; the DFS enumerates exactly those.
    """
    order = np.argsort(masses)
    masses = masses[order]
    cols = cols[:, order]
    nat = masses.shape[0]
    best = [base.max() if base.size else 0.0, []]
    suffix = np.concatenate([np.cumsum(masses[::-1])[::-1], [0.0]])

    def visit(idx, mass, vec, chosen):
        if idx == nat:
            val = vec.max()
            if val > best[0]:
                best[0] = val
                best[1] = list(chosen)
            return
        if mass + suffix[idx] < delta:
            # everything left fits: the unique maximal completion
            val = (vec + cols[:, idx:].sum(axis=1)).max()
            if val > best[0]:
                best[0] = val
                best[1] = list(chosen) + list(range(idx, nat))
            return
        if mass + masses[idx] < delta:
            chosen.append(idx)
            visit(idx + 1, mass + masses[idx], vec + cols[:, idx], chosen)
            chosen.pop()
        visit(idx + 1, mass, vec, chosen)

    visit(0, 0.0, base.copy(), [])
    return best[0], [int(order[i]) for i in best[1]]


def _beta_greedy(base, cols, masses, delta):
    """Heuristic lower bound: greedy fill by decreasing column sup, each seed first."""
    nat = masses.shape[0]
    sups = cols.max(axis=0) if nat else np.empty(0)
    best_val = base.max() if base.size else 0.0
    best_set: list[int] = []
    seeds = list(range(nat)) or [None]
    for seed in seeds:
        chosen, mass, vec = [], 0.0, base.copy()
        order = [seed] + [j for j in np.argsort(-sups) if j != seed] if seed is not None else []
        for j in order:
            if mass + masses[j] < delta:
                chosen.append(int(j))
                mass += masses[j]
                vec = vec + cols[:, j]
        val = vec.max()
        if val > best_val:
            best_val, best_set = val, sorted(chosen)
    return best_val, best_set


def kato_K1_beta(chain: SymmetricChain, nu: SmoothMeasure, K, delta: float) -> Beta1Result:
    """beta_1: sup over B within K of mass < delta of ||G(1_{K^c u B} nu)||_inf.

    Exhaustive (exact) when K holds at most 20 positive atoms; otherwise a
    greedy lower bound flagged as heuristic.
    """
    if not nu.is_nonnegative():
        raise ValidationError("beta_1 is defined for nonnegative measures")
    K = sorted(set(int(x) for x in K))
    mask = np.ones(chain.n, dtype=bool)
    mask[K] = False
    outside = SmoothMeasure(np.where(mask, nu.atoms, 0.0))
    base = green_apply(chain, 0.0, outside.atoms / chain.m)
    members = [b for b in K if nu.atoms[b] > 0.0]
    cols = _atom_columns(chain, nu, members)
    masses = nu.atoms[members]
    if len(members) <= EXACT_SUBSET_LIMIT:
        val, arg = _beta_exhaustive(base, cols, masses, delta)
        return Beta1Result(value=float(val), exact=True,
                           argmax=sorted(members[i] for i in arg))
    val, arg = _beta_greedy(base, cols, masses, delta)
    return Beta1Result(value=float(val), exact=False, argmax=sorted(members[i] for i in arg))


def kato_Kinf_certificate(chain: SymmetricChain, nu: SmoothMeasure,
                          eps: float) -> KinfCertificate | None:
    """Search for a core set K and delta > 0 certifying the eps smallness bound.

    States enter K ranked by their single-atom potential sup-norm; delta is
    then pushed up by bisection.  Any returned pair re-verifies directly.
    """
    if not nu.is_nonnegative():
        raise ValidationError("certificate search needs a nonnegative measure")
    if eps <= 0.0:
        return None
    support = [int(x) for x in np.flatnonzero(nu.atoms > 0.0)]
    if not support:
        return KinfCertificate(K=[], delta=1.0, eps=eps, worst_value=0.0, exact=True)
    cols = _atom_columns(chain, nu, support)
    rank = [support[j] for j in np.argsort(-cols.max(axis=0))]
    for j in range(len(rank) + 1):
        K = sorted(rank[:j])
        res0 = kato_K1_beta(chain, nu, K, 0.0)
        if res0.value >= eps:
            continue
        masses = nu.atoms[K]
        # below the least positive atom mass only the empty set is admissible
        lo = masses[masses > 0.0].min() if np.any(masses > 0.0) else 1.0
        hi = float(nu.atoms.sum()) + 1.0
        if kato_K1_beta(chain, nu, K, hi).value < eps:
            lo = hi
        else:
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if kato_K1_beta(chain, nu, K, mid).value < eps:
                    lo = mid
                else:
                    hi = mid
        check = kato_K1_beta(chain, nu, K, lo)
        if check.value < eps:
            return KinfCertificate(K=K, delta=float(lo), eps=eps,
                                   worst_value=float(check.value), exact=check.exact)
    return None


def energy_inequality_ratio(chain: SymmetricChain, nu: SmoothMeasure) -> tuple[float, float]:
    """Largest ratio of the measure form to the energy form, with its bound.

    ratio = max_u (sum u^2 nu) / E(u, u) via the generalized eigenproblem;
    the bound is ||G nu||_inf, and ratio <= bound is asserted.
    """
    import scipy.linalg as sla

    if not nu.is_nonnegative():
        raise ValidationError("energy inequality needs a nonnegative measure")
    if not chain.is_transient:
        raise ValidationError("energy form is singular on a conservative chain; "
                              "use an alpha-subprocess")
    if not np.any(nu.atoms > 0.0):
        return 0.0, float(np.max(potential(chain, nu, 0.0)))
    E = energy_matrix(chain)
    w = sla.eigh(np.diag(nu.atoms), E, eigvals_only=True)
    ratio = float(w[-1])
    bound = float(np.max(potential(chain, nu, 0.0)))
    if ratio > bound + 1e-9:
        raise InvariantViolation(
            f"energy inequality violated: ratio {ratio} > bound {bound}")
    return ratio, bound


def jump_measure_of_F(chain: SymmetricChain, F, weight: str = "abs") -> SmoothMeasure:
    """Measure with atoms m[x] sum_y w(F[x][y]) q[x][y].

    weight "abs" gives the smallness measure behind the jump Kato classes;
    "exp_minus_one" gives the compensator measure of the exponential jump
    functional (signed when F takes negative values).
    """
    import scipy.sparse as sps

    Fm = getattr(F, "F", F)  # accept a JumpPerturbation or a raw matrix
    if weight == "abs":
        fn = np.abs
    elif weight == "exp_minus_one":
        fn = np.expm1
    else:
        raise ValidationError(f"unknown weight {weight!r}")
    if sps.issparse(chain.q):
        coo = chain.q.tocoo()
        if sps.issparse(Fm):
            fvals = np.asarray(Fm.tocsr()[coo.row, coo.col]).ravel()
        else:
            fvals = Fm[coo.row, coo.col]
        atoms = np.zeros(chain.n)
        np.add.at(atoms, coo.row, fn(fvals) * coo.data)
        return SmoothMeasure(chain.m * atoms)
    Fd = Fm.toarray() if sps.issparse(Fm) else np.asarray(Fm, dtype=float)
    if not np.allclose(Fd, Fd.T, rtol=0.0, atol=0.0):
        raise ValidationError("F must be symmetric")
    return SmoothMeasure(chain.m * np.sum(fn(Fd) * chain.q, axis=1))


def khasminskii_factorial_bound(k: int) -> float:
    """(k!)^{1/k}, the moment constant in the potential transfer bound."""
    return math.factorial(k) ** (1.0 / k)
