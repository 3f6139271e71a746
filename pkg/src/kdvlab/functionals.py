"""Integrals of motion of KdV, their positivised versions and the rank calculus.

The integrals are evaluated by trapezoid quadrature on a grid with more than
4K points, which integrates the quartic terms of band-limited fields exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .spectral import (
    GridMismatchError,
    SpectralField,
    _to_physical,
    quadrature,
    quadrature_points,
    sobolev_norm,
)

__all__ = [
    "FunctionalParams",
    "CapabilityError",
    "DomainError",
    "invariant_value",
    "modified_invariant",
    "fp_functional",
    "sandwich_check",
    "fp_sandwich_check",
    "escalate_alpha_bar",
    "monomial_rank",
    "enumerate_rank_monomials",
    "interp_exponent",
    "monomial_l1",
]


class CapabilityError(NotImplementedError):
    """Requested an integral of motion beyond I_2."""


class DomainError(ValueError):
    pass


def _default_alpha():
    return {0: 10.0, 1: 10.0, 2: 10.0}


def _default_q():
    return {0: 1.0, 1: 2.0, 2: 7.0 / 3.0}


@dataclass(frozen=True)
class FunctionalParams:
    """Weights of the positivising L^2 terms.

    ``alpha_bar[m] * (||v||^2 + 1) ** q_bar[m]`` is added to ``I_m``;
    ``fp_alpha_bar`` weights the modified Hamiltonian of the nudged
    difference and ``eta0`` the exponential factor of ``d_k``.
    """

    alpha_bar: dict = field(default_factory=_default_alpha)
    q_bar: dict = field(default_factory=_default_q)
    fp_alpha_bar: float = 10.0
    eta0: float = 0.1

    def __post_init__(self):
        a = {**_default_alpha(), **{int(m): float(v) for m, v in self.alpha_bar.items()}}
        q = {**_default_q(), **{int(m): float(v) for m, v in self.q_bar.items()}}
        if any(v < 0 for v in a.values()) or self.fp_alpha_bar < 0:
            raise ValueError("alpha_bar entries must be nonnegative")
        if any(v < 0 for v in q.values()):
            raise ValueError("q_bar entries must be nonnegative")
        if self.eta0 < 0:
            raise ValueError("eta0 must be nonnegative")
        object.__setattr__(self, "alpha_bar", a)
        object.__setattr__(self, "q_bar", q)

    def with_alpha(self, m: int, value: float) -> "FunctionalParams":
        return replace(self, alpha_bar={**self.alpha_bar, m: value})


def _samples(u: SpectralField, orders, n=None):
    n = n or quadrature_points(u.grid.K)
    ik = 1j * u.grid.wavenumbers
    return [_to_physical(u.coeffs * ik**j, n) for j in orders]


def invariant_value(u: SpectralField, m: int) -> float:
    """``I_0``, ``I_1`` or ``I_2`` of ``u``.

    I_0 = int u^2, I_1 = int (Du)^2 - u^3/3,
    I_2 = int (D^2u)^2 - 5/3 u (Du)^2 + 5/36 u^4.
    """
    if m == 0:
        (v,) = _samples(u, (0,))
        return quadrature(v * v)
    if m == 1:
        v, dv = _samples(u, (0, 1))
        return quadrature(dv * dv - v**3 / 3.0)
    if m == 2:
        v, dv, d2v = _samples(u, (0, 1, 2))
        return quadrature(d2v * d2v - 5.0 / 3.0 * v * dv * dv + 5.0 / 36.0 * v**4)
    raise CapabilityError(f"I_{m} is not available; only m in {{0, 1, 2}}")


def _lift(u: SpectralField, m: int, p: FunctionalParams) -> float:
    return p.alpha_bar[m] * (sobolev_norm(u) ** 2 + 1.0) ** p.q_bar[m]


def modified_invariant(u: SpectralField, m: int, p: FunctionalParams | None = None) -> float:
    """``I_m^+(u) = I_m(u) + alpha_bar_m (||u||^2 + 1)^q_bar_m``."""
    p = p or FunctionalParams()
    return invariant_value(u, m) + _lift(u, m, p)


def _fp_lift(w, u, alpha_bar):
    w2 = sobolev_norm(w) ** 2
    return alpha_bar * (w2 ** (5.0 / 3.0) + (1.0 + sobolev_norm(u) ** 2) * w2)


def fp_functional(w: SpectralField, u: SpectralField, alpha_bar: float = 10.0) -> float:
    """Modified Hamiltonian of the difference ``w = v - u`` of a nudged pair.

    int (Dw)^2 - w^3/3 - u w^2 plus
    alpha_bar * (||w||^{10/3} + (1 + ||u||^2) ||w||^2). With ``alpha_bar = 0``
    this is ``I_1(w) - int u w^2``.
    """
    if w.grid != u.grid:
        raise GridMismatchError(f"{w.grid} != {u.grid}")
    ws, dws = _samples(w, (0, 1))
    (us,) = _samples(u, (0,))
    core = quadrature(dws * dws - ws**3 / 3.0 - us * ws * ws)
    return core + _fp_lift(w, u, alpha_bar)


def _within(lower, value, upper):
    return 0.5 * lower <= value <= 1.5 * upper


def sandwich_check(u: SpectralField, m: int, p: FunctionalParams | None = None) -> bool:
    """Whether ``I_m^+(u)`` lies between 1/2 and 3/2 of ``||D^m u||^2 + lift``."""
    p = p or FunctionalParams()
    ref = sobolev_norm(u, m) ** 2 + _lift(u, m, p)
    return _within(ref, modified_invariant(u, m, p), ref)


def fp_sandwich_check(w: SpectralField, u: SpectralField, alpha_bar: float = 10.0) -> bool:
    ref = sobolev_norm(w, 1) ** 2 + _fp_lift(w, u, alpha_bar)
    return _within(ref, fp_functional(w, u, alpha_bar), ref)


def escalate_alpha_bar(fields, m: int, p: FunctionalParams | None = None, max_doublings: int = 60):
    """Double ``alpha_bar[m]`` until every field in ``fields`` passes the sandwich.

    Returns the updated parameters. Raises ``RuntimeError`` if the budget of
    doublings runs out (the lift is then not strong enough at this ``q_bar``).
    """
    p = p or FunctionalParams()
    fields = list(fields)
    if p.alpha_bar[m] <= 0:
        p = p.with_alpha(m, 1.0)
    for _ in range(max_doublings):
        if all(sandwich_check(u, m, p) for u in fields):
            return p
        p = p.with_alpha(m, 2 * p.alpha_bar[m])
    raise RuntimeError(f"sandwich for I_{m}^+ still failing at alpha_bar={p.alpha_bar[m]}")


# rank calculus ------------------------------------------------------------


def _beta(beta) -> tuple[int, ...]:
    beta = tuple(int(b) for b in beta)
    if not beta or any(b < 0 for b in beta):
        raise ValueError(f"multi-index must be a nonempty tuple of nonnegative integers: {beta}")
    return beta


def monomial_rank(beta) -> Fraction:
    """Weighted degree ``sum_j (1 + j/2) beta_j`` of ``prod_j (D^j v)^beta_j``."""
    return sum((Fraction(2 + j, 2) * b for j, b in enumerate(_beta(beta))), Fraction(0))


def enumerate_rank_monomials(k: int, n) -> set[tuple[int, ...]]:
    """All multi-indices in ``k + 1`` variables with rank exactly ``n``."""
    n = Fraction(n)
    if k < 0 or n < 0:
        raise ValueError("need k >= 0 and n >= 0")
    weights = [Fraction(2 + j, 2) for j in range(k + 1)]
    out = set()

    def rec(j, remaining, prefix):
        if j == k:
            b, r = divmod(remaining, weights[j])
            if r == 0:
                out.add(tuple(prefix) + (int(b),))
            return
        for b in range(int(remaining // weights[j]) + 1):
            rec(j + 1, remaining - b * weights[j], prefix + [b])

    rec(0, n, [])
    return out


def interp_exponent(k: int, beta) -> Fraction:
    """Exponent ``r`` in ``||pi_beta(D_k v)||_{L^1} <= c ||D^{k+2} v||^r ||v||^{|beta|-r}``.

    Requires ``rank(beta) <= k + 4``; ``beta`` shorter than ``k + 1`` is
    padded with zeros.
    """
    beta = _beta(beta)
    if len(beta) > k + 1:
        raise ValueError(f"multi-index {beta} has more than k+1={k + 1} entries")
    beta = beta + (0,) * (k + 1 - len(beta))
    rank = monomial_rank(beta)
    if rank > k + 4:
        raise DomainError(f"rank {rank} exceeds k + 4 = {k + 4}")
    size = sum(beta)
    top = beta[k]
    tail = 1 if top >= 2 else Fraction(top, 2)
    return (2 * rank - Fraction(3, 2) * size - tail) / (k + 2)


def monomial_l1(u: SpectralField, beta, n: int | None = None) -> float:
    """Quadrature of ``|prod_j (D^j u)^beta_j|``."""
    beta = _beta(beta)
    n = n or 4 * quadrature_points(u.grid.K)
    cols = _samples(u, range(len(beta)), n)
    prod = np.ones(n)
    for b, c in zip(beta, cols):
        if b:
            prod = prod * c**b
    return quadrature(np.abs(prod))

