import math

import numpy as np
import pytest

from kdvlab.deterministic import (
    determining_modes_experiment,
    one_point_attractor_check,
    steady_state_check,
    tail_sup_h2,
)
from kdvlab.spectral import Grid, field_from_modes, l2_inner, sobolev_norm


@pytest.fixture
def forced():
    g = Grid(32)
    return g, field_from_modes(g, [(1, 0.5)])


def test_determining_modes_and_control(forced):
    g, f = forced
    u0 = field_from_modes(g, [])
    v0 = field_from_modes(g, [(1, 0.3), (2, -0.4j), (3, 0.2)])
    rep = determining_modes_experiment(u0, v0, None, 0.5, f, T=15.0, sample_every=500)
    assert rep.N == 6 and rep.lam == pytest.approx(math.sqrt(math.pi))
    ctl = determining_modes_experiment(u0, v0, 0, 0.5, f, T=15.0, sample_every=500)
    assert rep.ratio < 1e-4 and rep.passed
    assert ctl.ratio > 10 * rep.ratio
    assert rep.times[-1] == pytest.approx(15.0)


def test_steady_state_identity(forced):
    g, f = forced
    rep = steady_state_check(100.0, f, T=0.5)
    assert rep.status == "steady"
    assert rep.identity_gap <= 1e-6
    assert rep.l2 == pytest.approx(math.sqrt(math.pi) / 100, rel=0.05)
    assert rep.norm_bound_gap <= 0
    assert sobolev_norm(rep.final) ** 2 == pytest.approx(l2_inner(f, rep.final) / 100, rel=1e-9)


def test_steady_state_inconclusive_when_not_converged(forced):
    g, f = forced
    rep = steady_state_check(0.5, f, T=0.1, u0=field_from_modes(g, [(2, 1.0)]))
    assert rep.status == "inconclusive"
    assert rep.residual > 1e-8


def test_one_point_attractor(forced):
    g, f = forced
    starts = [field_from_modes(g, []), field_from_modes(g, [(1, 1.0)]), field_from_modes(g, [(2, 0.5j), (5, 0.2)])]
    rep = one_point_attractor_check(20.0, f, starts, T=2.0)
    assert rep.passed and len(rep.distances) == 3
    assert max(rep.distances.values()) < 1e-6
    weak = one_point_attractor_check(0.05, f, starts, T=0.5, tol=1e-6)
    assert not weak.passed
    with pytest.raises(ValueError):
        one_point_attractor_check(1.0, f, starts[:1], T=1.0)


def test_tail_sup_h2_shrinks_with_gamma(forced):
    g, f = forced
    u0 = field_from_modes(g, [(1, 0.5)])
    a = tail_sup_h2(u0, 10.0, f, T=2.0)
    b = tail_sup_h2(u0, 40.0, f, T=2.0)
    assert b < a
    assert b == pytest.approx(sobolev_norm(f, 2) / 40, rel=0.05)
