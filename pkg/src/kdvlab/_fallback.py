"""Pure numpy stepping kernel, used when the compiled extension is absent.

All rows of ``U`` advance together; the quadratic term is evaluated with
batched transforms on the dealiasing grid.
"""
import numpy as np

from .spectral import _to_physical

EEM = 0
ETDRK4 = 1


def _quadratic(X, n, k):
    K = X.shape[-1]
    u = _to_physical(X, n)
    ux = _to_physical(1j * k * X, n)
    return np.fft.rfft(u * ux)[..., 1 : K + 1] / n


def advance(
    U, coef, F, nonlin, scheme, dt, partner, lam, nproj, budget, inv_a2,
    cut_int, novikov, last_incr, active, deact_step, noise, noise_idx, alive, blow_step,
    step0, nsteps, n,
):
    """Advance every row of ``U`` by ``nsteps`` steps in place.

    Row ``b`` with ``partner[b] >= 0`` is nudged towards its partner on modes
    ``<= nproj[b]`` with strength ``lam[b]`` for as long as ``active[b]`` holds;
    the cutoff integral and Novikov integral are accumulated at the left end of
    each step and the row is switched off once ``cut_int[b] >= budget[b]``.
    Noise row ``noise[s, noise_idx[b]]`` is added through the linear
    propagator. Rows that go non-finite are frozen and their step recorded.
    """
    B, K = U.shape
    k = np.arange(1, K + 1, dtype=float)
    coupled = np.flatnonzero(partner >= 0)
    low = k[None, :] <= nproj[coupled, None]
    noisy = np.flatnonzero(noise_idx >= 0) if noise.shape[0] else np.empty(0, int)
    E, P, E2, Q, f1, f2, f3 = coef

    def explicit(X, on):
        if nonlin:
            G = F - _quadratic(X, n, k)
        else:
            G = np.repeat(F[None, :], B, axis=0)
        if on.size:
            rows = coupled[on]
            d = np.where(low[on], X[rows] - X[partner[rows]], 0)
            G[rows] -= lam[rows, None] * d
        return G

    with np.errstate(all="ignore"):
        for s in range(nsteps):
            on = np.zeros(0, dtype=int)
            if coupled.size:
                live = (active[coupled] != 0) & (alive[coupled] != 0)
                expired = live & (cut_int[coupled] >= budget[coupled])
                if expired.any():
                    active[coupled[expired]] = 0
                    deact_step[coupled[expired]] = step0 + s
                on = np.flatnonzero(live & ~expired)
                if on.size:
                    rows = coupled[on]
                    d = np.where(low[on], U[rows] - U[partner[rows]], 0)
                    m2 = d.real**2 + d.imag**2
                    last_incr[rows] = dt * 4.0 * np.pi * m2.sum(axis=1)
                    cut_int[rows] += last_incr[rows]
                    novikov[rows] += dt * lam[rows] ** 2 * (m2 * inv_a2).sum(axis=1)

            G0 = explicit(U, on)
            if scheme == ETDRK4:
                A = E2 * U + Q * G0
                G1 = explicit(A, on)
                Bs = E2 * U + Q * G1
                G2 = explicit(Bs, on)
                C = E2 * A + Q * (2.0 * G2 - G0)
                G3 = explicit(C, on)
                new = E * U + f1 * G0 + 2.0 * f2 * (G1 + G2) + f3 * G3
            else:
                new = E * U + P * G0
            if noisy.size:
                new[noisy] += E * noise[s, noise_idx[noisy]]

            dead = alive == 0
            if dead.any():
                new[dead] = U[dead]
            U[...] = new
            bad = (alive != 0) & ~np.isfinite(U).all(axis=1)
            if bad.any():
                alive[bad] = 0
                blow_step[bad] = step0 + s
