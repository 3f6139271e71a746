"""Self-test suite run by ``kdv verify``: quick versions of the exact oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import backend
from .ergodics import EnsembleConfig, ensemble_mean, mean_l2_oracle, run_ensemble
from .functionals import (
    enumerate_rank_monomials,
    interp_exponent,
    invariant_value,
    monomial_rank,
    sandwich_check,
)
from .integrator import (
    IndependentCopy,
    NoiseModel,
    NudgedCutoff,
    SolverParams,
    integrate,
    integrate_pair,
    linear_symbol,
)
from .deterministic import steady_state_check
from .spectral import Grid, SpectralField, field_from_modes, nonlinear_term

__all__ = ["OracleResult", "run_oracles", "brute_force_nonlinear", "format_report"]


@dataclass
class OracleResult:
    name: str
    measured: float
    expected: float
    tolerance: float
    passed: bool
    note: str = ""

    def as_dict(self):
        return {
            "measured": self.measured,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "note": self.note,
        }


def brute_force_nonlinear(coeffs: np.ndarray) -> np.ndarray:
    """Truncated ``u Du`` by summing every triad ``p + q = k`` over ``|p|, |q| <= K``."""
    K = len(coeffs)
    full = {0: 0j}
    for k in range(1, K + 1):
        full[k] = coeffs[k - 1]
        full[-k] = np.conj(coeffs[k - 1])
    out = np.zeros(K, dtype=complex)
    for k in range(1, K + 1):
        acc = 0j
        for p in range(-K, K + 1):
            q = k - p
            if -K <= q <= K:
                acc += full[p] * 1j * q * full[q]
        out[k - 1] = acc
    return out


def _random_field(grid, rng, scale=1.0, decay=1.0):
    k = grid.wavenumbers
    c = (rng.standard_normal(grid.K) + 1j * rng.standard_normal(grid.K)) * scale / k**decay
    return SpectralField(grid, c)


def _linear(seed):
    grid = Grid(16)
    rng = np.random.default_rng(seed)
    u0 = _random_field(grid, rng)
    p = SolverParams(dt=1e-3, gamma=0.3, epsilon=1e-3, nonlinearity_on=False, sample_every=1000)
    rec = integrate(u0, p, T=1.0, observers=())
    exact = np.exp(linear_symbol(grid.wavenumbers, 0.3, 1e-3) * 1.0) * u0.coeffs
    err = float(np.max(np.abs(rec.final.coeffs - exact)))
    return OracleResult("linear_exactness", err, 0.0, 1e-12, err < 1e-12, "1000 steps, K=16")


def _dealias(seed):
    grid = Grid(16)
    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(20):
        u = _random_field(grid, rng, decay=0.0)
        err = max(err, float(np.max(np.abs(nonlinear_term(u).coeffs - brute_force_nonlinear(u.coeffs)))))
    return OracleResult("dealiasing", err, 0.0, 1e-12, err < 1e-12, "20 random fields, K=16")


def _l2_decay():
    grid = Grid(32)
    u0 = field_from_modes(grid, [(1, 0.5), (2, 0.3j), (5, -0.1)])
    gamma = 1.0
    p = SolverParams(dt=1e-3, gamma=gamma, sample_every=1000)
    rec = integrate(u0, p, T=1.0, observers=("l2",))
    ratio = rec.series["l2"][-1] / rec.series["l2"][0]
    rel = abs(ratio / math.exp(-gamma) - 1)
    return OracleResult("l2_decay", float(ratio), math.exp(-gamma), 1e-6, rel < 1e-6, "relative, gamma=1, t=1")


def _conservation():
    grid = Grid(32)
    u0 = field_from_modes(grid, [(1, 0.5)])
    p = SolverParams(dt=1e-3, gamma=0.0, sample_every=1000)
    rec = integrate(u0, p, T=1.0, observers=("I0", "I1", "I2"))
    drift = max(abs(rec.series[n][-1] / rec.series[n][0] - 1) for n in ("I0", "I1", "I2"))
    return OracleResult("conservation", float(drift), 0.0, 1e-6, drift < 1e-6, "max relative drift of I0..I2, T=1")


def _rank():
    ok = monomial_rank((1, 2)) == 4 and monomial_rank((4,)) == 4
    ok &= interp_exponent(0, (3,)) == Fraction(1, 4)
    ok &= interp_exponent(2, (0, 0, 2)) == 1
    ok &= interp_exponent(1, (1, 2)) == Fraction(5, 6)
    worst = Fraction(0)
    for k in range(4):
        for n2 in range(0, 2 * (k + 4) + 1):
            for beta in enumerate_rank_monomials(k, Fraction(n2, 2)):
                if sum(beta):
                    worst = max(worst, interp_exponent(k, beta))
    ok &= worst < 2
    return OracleResult("rank_calculus", float(worst), 2.0, 0.0, bool(ok), "unit values and max exponent < 2, k <= 3")


def _sandwich(seed):
    grid = Grid(16)
    rng = np.random.default_rng(seed)
    fails = 0
    for _ in range(30):
        u = _random_field(grid, rng, scale=rng.uniform(0.01, 2.0), decay=2.0)
        fails += sum(not sandwich_check(u, m) for m in range(3))
    return OracleResult("sandwich", float(fails), 0.0, 0.0, fails == 0, "30 random fields, m = 0, 1, 2")


def _steady():
    grid = Grid(16)
    f = field_from_modes(grid, [(1, 0.5)])
    rep = steady_state_check(100.0, f, T=0.5)
    target = math.sqrt(math.pi) / 100
    ok = rep.identity_gap <= 1e-6 and abs(rep.l2 / target - 1) <= 0.05
    return OracleResult("steady_state", rep.identity_gap, 0.0, 1e-6, ok, f"gamma=100, ||u||={rep.l2:.6g}")


def _cutoff_zero(seed):
    grid = Grid(16)
    u0 = field_from_modes(grid, [(1, 0.4)])
    v0 = field_from_modes(grid, [(2, 0.3)])
    f = field_from_modes(grid, [(1, 0.5)])
    model = NoiseModel.uniform(range(1, 5), 0.1)
    p = SolverParams(dt=1e-3, seed=seed, sample_every=100)
    a = integrate_pair(u0, v0, NudgedCutoff(2.0, 4, 0.0), p, f, model, 1.0)
    b = integrate_pair(u0, v0, IndependentCopy(), p, f, model, 1.0)
    same = np.array_equal(a.v_final.coeffs, b.v_final.coeffs)
    return OracleResult("cutoff_zero_budget", float(not same), 0.0, 0.0, bool(same), "bit-identical to the independent copy")


def _mean_l2(seed):
    grid = Grid(8)
    model = NoiseModel.uniform(range(1, 5), 0.1)
    u0 = field_from_modes(grid, [(1, 0.5)])
    p = SolverParams(dt=1e-3, gamma=1.0, sample_every=250)
    res = run_ensemble(EnsembleConfig(400, seed=seed, T=1.0, observables=("l2_sq",)), u0, p, None, model)
    t, mean, se = ensemble_mean(res, "l2_sq")
    oracle = mean_l2_oracle(1.0, model.sigma_l2_sq, float(res.records[0].series["l2_sq"][0]), t)
    z = float(np.max(np.abs(mean[1:] - oracle[1:]) / se[1:]))
    return OracleResult("mean_l2", z, 0.0, 3.0, z <= 3.0, "max |mean - oracle| / stderr, 400 members")


def _backends(seed):
    if "compiled" not in backend.BACKENDS:
        return OracleResult("backend_agreement", 0.0, 0.0, 1e-10, True, "compiled backend unavailable; skipped")
    grid = Grid(16)
    rng = np.random.default_rng(seed)
    u0 = _random_field(grid, rng, scale=0.3, decay=2.0)
    f = field_from_modes(grid, [(1, 0.5)])
    model = NoiseModel.uniform(range(1, 4), 0.1)
    p = SolverParams(dt=1e-3, seed=seed, sample_every=500)
    a = integrate(u0, p, f, model, 0.5, observers=(), backend_name="compiled").final.coeffs
    b = integrate(u0, p, f, model, 0.5, observers=(), backend_name="python").final.coeffs
    err = float(np.max(np.abs(a - b)))
    return OracleResult("backend_agreement", err, 0.0, 1e-10, err < 1e-10, "compiled vs numpy, 500 steps")


def run_oracles(seed: int = 0) -> list[OracleResult]:
    return [
        _linear(seed),
        _dealias(seed),
        _l2_decay(),
        _conservation(),
        _rank(),
        _sandwich(seed),
        _steady(),
        _cutoff_zero(seed),
        _mean_l2(seed),
        _backends(seed),
    ]


def format_report(results) -> str:
    lines = []
    for r in results:
        tag = "PASS" if r.passed else "FAIL"
        lines.append(f"{tag} {r.name:<20} measured={r.measured:.6g} expected={r.expected:.6g} "
                     f"tol={r.tolerance:.3g}  {r.note}")
    return "\n".join(lines)
