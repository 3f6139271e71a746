"""Experiments with the noise switched off: determining modes, steady states
and contraction onto a single point at large damping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .integrator import Nudged, SolverParams, integrate, integrate_pair
from .nudging import default_nudge_params
from .spectral import SpectralField, l2_inner, sobolev_norm, zeros

__all__ = [
    "DeterminingModesReport",
    "SteadyStateReport",
    "AttractorReport",
    "determining_modes_experiment",
    "steady_state_check",
    "one_point_attractor_check",
    "tail_sup_h2",
]


@dataclass
class DeterminingModesReport:
    times: np.ndarray
    diff_h1: np.ndarray
    lam: float
    N: int
    ratio: float
    threshold: float
    passed: bool


def determining_modes_experiment(u0: SpectralField, u0_tilde: SpectralField, N: int | None,
                                 gamma: float, f: SpectralField | None, T: float,
                                 lam: float | None = None, dt: float = 1e-3, c: float = 1.0,
                                 threshold: float = 1e-4, sample_every: int = 100,
                                 backend_name=None) -> DeterminingModesReport:
    """Run ``u`` from ``u0`` and the nudged copy from ``u0_tilde`` without noise.

    ``lam`` and ``N`` default to the parameter rule with ``||sigma|| = 0``;
    ``N = 0`` turns the feedback off and serves as the negative control.
    """
    f = f if f is not None else zeros(u0.grid)
    rule_lam, rule_N = default_nudge_params(gamma, sobolev_norm(f, 1), 0.0, c)
    lam = rule_lam if lam is None else lam
    N = rule_N if N is None else N
    params = SolverParams(dt=dt, gamma=gamma, sample_every=sample_every)
    rec = integrate_pair(u0, u0_tilde, Nudged(lam, N), params, f, None, T, backend_name=backend_name)
    d = rec.series["diff_h1"]
    ratio = float(d[-1] / d[0]) if d[0] else 0.0
    return DeterminingModesReport(rec.times, d, lam, N, ratio, threshold, ratio <= threshold)


@dataclass
class SteadyStateReport:
    residual: float
    identity_gap: float
    norm_bound_gap: float
    l2: float
    status: str
    final: SpectralField = field(repr=False)


def steady_state_check(gamma: float, f: SpectralField, T: float, dt: float = 1e-3,
                       u0: SpectralField | None = None, threshold: float = 1e-8,
                       backend_name=None) -> SteadyStateReport:
    """Run to ``T`` and test the balance ``||u||^2 = <f, u> / gamma`` of a steady state.

    ``residual`` is ``||u(T) - u(T - 10 dt)|| / (10 dt)``; above ``threshold``
    the status is ``"inconclusive"``. ``norm_bound_gap = ||u|| - ||f|| / gamma``
    is nonpositive at any steady state.
    """
    u0 = u0 if u0 is not None else zeros(f.grid)
    params = SolverParams(dt=dt, gamma=gamma, sample_every=1)
    nsteps = params.steps_for(T)
    lag = 10
    head = integrate(u0, params, f, None, (nsteps - lag) * dt, observers=(), backend_name=backend_name)
    rec = integrate(head.final, params, f, None, lag * dt, observers=(), backend_name=backend_name)
    u = rec.final
    residual = sobolev_norm(u - head.final) / (lag * dt)
    l2 = sobolev_norm(u)
    gap = abs(l2**2 - l2_inner(f, u) / gamma)
    bound = l2 - sobolev_norm(f) / gamma
    status = "steady" if residual <= threshold else "inconclusive"
    return SteadyStateReport(residual, gap, bound, l2, status, u)


@dataclass
class AttractorReport:
    distances: dict
    tolerance: float
    passed: bool
    finals: list = field(repr=False, default_factory=list)


def one_point_attractor_check(gamma: float, f: SpectralField, u0_list, T: float,
                              dt: float = 1e-3, tol: float = 1e-6, backend_name=None) -> AttractorReport:
    """Pairwise L^2 distances at ``T`` between runs from several initial states."""
    u0_list = list(u0_list)
    if len(u0_list) < 2:
        raise ValueError("need at least two initial conditions")
    params = SolverParams(dt=dt, gamma=gamma, sample_every=max(1, int(round(T / dt))))
    finals = [integrate(u, params, f, None, T, observers=(), backend_name=backend_name).final for u in u0_list]
    dist = {(i, j): sobolev_norm(finals[i] - finals[j]) for i, j in combinations(range(len(finals)), 2)}
    return AttractorReport(dist, tol, all(d <= tol for d in dist.values()), finals)


def tail_sup_h2(u0: SpectralField, gamma: float, f: SpectralField, T: float, dt: float = 1e-3,
                sample_every: int = 10, backend_name=None) -> float:
    """``sup ||u(t)||_{H^2}`` over sampled ``t`` in ``[T/2, T]``."""
    params = SolverParams(dt=dt, gamma=gamma, sample_every=sample_every)
    rec = integrate(u0, params, f, None, T, observers=("h2",), backend_name=backend_name)
    sel = rec.times >= T / 2 - 1e-12
    return float(np.max(rec.series["h2"][sel])) if sel.any() else math.nan
