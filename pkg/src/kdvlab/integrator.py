"""Time integration of the damped, forced, stochastically driven KdV equation

    du + (u Du + D^3 u + gamma u + eps D^4 u) dt = f dt + sigma dW

on modes 1..K. The linear part is propagated exactly; the explicit part
(quadratic term, forcing, nudging) uses exponential Euler or ETDRK4, and the
additive noise increment enters through the linear propagator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import backend
from .functionals import (
    FunctionalParams,
    fp_functional,
    fp_sandwich_check,
    invariant_value,
    modified_invariant,
)
from .spectral import Grid, GridMismatchError, SpectralField, sobolev_norm, zeros

__all__ = [
    "BlowUpError",
    "ConfigurationError",
    "NoiseModel",
    "SolverParams",
    "TrajectoryRecord",
    "CoupledRecord",
    "IndependentCopy",
    "Nudged",
    "NudgedCutoff",
    "linear_symbol",
    "phi1",
    "make_stream",
    "sample_noise_increment",
    "step",
    "integrate",
    "integrate_pair",
    "OBSERVABLES",
    "regularization_sweep",
]

SCHEMES = {"eem": backend._fallback.EEM, "etdrk4": backend._fallback.ETDRK4}


class BlowUpError(RuntimeError):
    """A coefficient became non-finite."""

    def __init__(self, step, time=None, member=None):
        self.step = step
        self.time = time
        self.member = member
        where = f" (member {member})" if member is not None else ""
        super().__init__(f"non-finite state at step {step}, t={time}{where}")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Additive noise: each ``(k, a)`` drives ``a cos(kx) dW1 + a sin(kx) dW2``."""

    channels: tuple = ()

    def __post_init__(self):
        ch = tuple((int(k), float(a)) for k, a in self.channels)
        ks = [k for k, _ in ch]
        if len(set(ks)) != len(ks):
            raise ConfigurationError(f"duplicate noise wavenumbers in {ks}")
        for k, a in ch:
            if k < 1 or a < 0:
                raise ConfigurationError(f"bad noise channel (k={k}, a={a})")
        object.__setattr__(self, "channels", tuple(sorted(ch)))

    @classmethod
    def uniform(cls, modes, amplitude):
        return cls(tuple((k, amplitude) for k in modes))

    @property
    def sigma_l2_sq(self) -> float:
        return 2 * math.pi * sum(a * a for _, a in self.channels)

    def covers(self, N: int) -> bool:
        """Range condition: every mode 1..N carries a channel with positive amplitude."""
        amp = dict(self.channels)
        return all(amp.get(k, 0.0) > 0 for k in range(1, N + 1))

    def amplitudes(self, K: int) -> np.ndarray:
        a = np.zeros(K)
        for k, amp in self.channels:
            if k > K:
                raise ConfigurationError(f"noise channel k={k} exceeds K={K}")
            a[k - 1] = amp
        return a

    def draw(self, rng, K: int, dt: float, nsteps: int) -> np.ndarray:
        """``nsteps`` consecutive increments as a ``(nsteps, K)`` coefficient array."""
        out = np.zeros((nsteps, K), dtype=complex)
        if not self.channels:
            return out
        ks = np.array([k for k, _ in self.channels]) - 1
        if ks.max() >= K:
            raise ConfigurationError(f"noise channel k={ks.max() + 1} exceeds K={K}")
        amp = np.array([a for _, a in self.channels])
        xi = rng.standard_normal((nsteps, len(ks), 2))
        out[:, ks] = (0.5 * math.sqrt(dt)) * amp * (xi[..., 0] - 1j * xi[..., 1])
        return out


@dataclass(frozen=True)
class SolverParams:
    """Scalar parameters of one run.

    ``scheme`` is ``"eem"`` (exponential Euler--Maruyama), ``"etdrk4"``
    (fourth-order exponential Runge--Kutta for the drift) or ``"auto"``,
    which picks ETDRK4 when the noise model is empty and EEM otherwise.
    """

    dt: float
    gamma: float = 0.5
    epsilon: float = 0.0
    nonlinearity_on: bool = True
    seed: int = 0
    sample_every: int = 1
    scheme: str = "auto"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.gamma < 0 or self.epsilon < 0:
            raise ValueError("gamma and epsilon must be nonnegative")
        if int(self.sample_every) < 1:
            raise ValueError("sample_every must be >= 1")
        if self.scheme not in ("auto", "eem", "etdrk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def resolved_scheme(self, model: NoiseModel | None) -> str:
        if self.scheme != "auto":
            return self.scheme
        return "eem" if model is not None and model.channels else "etdrk4"

    def steps_for(self, T: float) -> int:
        return max(1, math.ceil(T / self.dt - 1e-9))


def linear_symbol(k, gamma: float, epsilon: float = 0.0):
    """Fourier symbol ``i k^3 - gamma - eps k^4`` of the linear right-hand side."""
    k = np.asarray(k, dtype=float)
    out = np.asarray(1j * k**3 - gamma - epsilon * k**4)
    return complex(out) if out.ndim == 0 else out


def _expm1(z):
    # exp(x + iy) - 1 without cancellation for small |z|
    x, y = z.real, z.imag
    return np.expm1(x) * np.cos(y) - 2 * np.sin(y / 2) ** 2 + 1j * np.exp(x) * np.sin(y)


def phi1(z):
    """``(e^z - 1) / z`` with a 6-term Taylor series for ``|z| < 1e-4``."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    taylor = 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120 + z**5 / 720
    out = np.where(small, taylor, _expm1(safe) / safe)
    return complex(out) if out.ndim == 0 else out


@lru_cache(maxsize=64)
def _coefficients(K: int, gamma: float, epsilon: float, dt: float, scheme: str) -> np.ndarray:
    L = linear_symbol(np.arange(1, K + 1), gamma, epsilon)
    z = L * dt
    coef = np.zeros((7, K), dtype=complex)
    coef[0] = np.exp(z)
    coef[1] = phi1(z) * dt
    if scheme == "etdrk4":
        # contour means over a unit circle around each z avoid cancellation
        M = 64
        r = np.exp(2j * np.pi * (np.arange(M) + 0.5) / M)
        Z = z[:, None] + r[None, :]
        eZ = np.exp(Z)
        coef[2] = np.exp(z / 2)
        coef[3] = dt * np.mean((np.exp(Z / 2) - 1) / Z, axis=1)
        coef[4] = dt * np.mean((-4 - Z + eZ * (4 - 3 * Z + Z**2)) / Z**3, axis=1)
        coef[5] = dt * np.mean((2 + Z + eZ * (Z - 2)) / Z**3, axis=1)
        coef[6] = dt * np.mean((-4 - 3 * Z - Z**2 + eZ * (4 - Z)) / Z**3, axis=1)
    coef.setflags(write=False)
    return coef


def make_stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent random stream for ensemble member ``index`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def sample_noise_increment(model: NoiseModel, grid: Grid, dt: float, rng) -> SpectralField:
    """One increment ``sigma dW`` over a step of length ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return SpectralField(grid, model.draw(rng, grid.K, dt, 1)[0])


def step(u: SpectralField, params: SolverParams, f: SpectralField, dW: SpectralField) -> SpectralField:
    """One step of the exponential integrator with a given noise increment.

    With the default scheme this is exponential Euler--Maruyama::

        u+ = e^{L dt} u + phi1(L dt) dt (f - u Du) + e^{L dt} dW
    """
    if not (u.grid == f.grid == dW.grid):
        raise GridMismatchError("u, f and dW must share a grid")
    scheme = "eem" if params.scheme == "auto" else params.scheme
    U = np.ascontiguousarray(u.coeffs[None, :].copy())
    state = _BatchState.plain(1)
    noise = np.ascontiguousarray(dW.coeffs[None, None, :])
    _advance(U, u.grid, params, scheme, f, state, noise, np.zeros(1, np.int64), 0, 1)
    if not state.alive[0]:
        raise BlowUpError(0, params.dt)
    return SpectralField(u.grid, U[0])


# observables -------------------------------------------------------------


def _obs_functional(m, plus):
    if plus:
        return lambda u: modified_invariant(u, m)
    return lambda u: invariant_value(u, m)


OBSERVABLES = {
    "l2": lambda u: sobolev_norm(u, 0),
    "h1": lambda u: sobolev_norm(u, 1),
    "h2": lambda u: sobolev_norm(u, 2),
    "l2_sq": lambda u: sobolev_norm(u, 0) ** 2,
    "I0": _obs_functional(0, False),
    "I1": _obs_functional(1, False),
    "I2": _obs_functional(2, False),
    "I0+": _obs_functional(0, True),
    "I1+": _obs_functional(1, True),
    "I2+": _obs_functional(2, True),
}


def _observers(observers):
    """Normalise names, ``(name, fn)`` pairs or a mapping into a dict."""
    if observers is None:
        return {}
    if isinstance(observers, dict):
        return dict(observers)
    out = {}
    for item in observers:
        if isinstance(item, str):
            if item not in OBSERVABLES:
                raise ValueError(f"unknown observable {item!r}; known: {sorted(OBSERVABLES)}")
            out[item] = OBSERVABLES[item]
        else:
            name, fn = item
            out[name] = fn
    return out


# batch engine -------------------------------------------------------------


@dataclass
class _BatchState:
    partner: np.ndarray
    lam: np.ndarray
    nproj: np.ndarray
    budget: np.ndarray
    inv_a2: np.ndarray | None = None
    cut_int: np.ndarray = None
    novikov: np.ndarray = None
    last_incr: np.ndarray = None
    active: np.ndarray = None
    deact_step: np.ndarray = None
    alive: np.ndarray = None
    blow_step: np.ndarray = None

    def __post_init__(self):
        B = len(self.partner)
        self.partner = backend.as_index(self.partner)
        self.nproj = backend.as_index(self.nproj)
        self.lam = np.ascontiguousarray(self.lam, dtype=float)
        self.budget = np.ascontiguousarray(self.budget, dtype=float)
        self.cut_int = np.zeros(B)
        self.novikov = np.zeros(B)
        self.last_incr = np.zeros(B)
        self.active = np.ones(B, dtype=np.uint8)
        self.deact_step = np.full(B, -1, dtype=np.int64)
        self.alive = np.ones(B, dtype=np.uint8)
        self.blow_step = np.full(B, -1, dtype=np.int64)

    @classmethod
    def plain(cls, B):
        return cls(np.full(B, -1), np.zeros(B), np.zeros(B), np.full(B, np.inf))


def _advance(U, grid, params, scheme, f, state, noise, noise_idx, step0, nsteps, which=None):
    K = grid.K
    inv_a2 = state.inv_a2 if state.inv_a2 is not None else np.zeros(K)
    backend.advance(
        U,
        _coefficients(K, float(params.gamma), float(params.epsilon), float(params.dt), scheme),
        np.ascontiguousarray(f.coeffs, dtype=complex),
        bool(params.nonlinearity_on),
        SCHEMES[scheme],
        float(params.dt),
        state.partner,
        state.lam,
        state.nproj,
        state.budget,
        np.ascontiguousarray(inv_a2, dtype=float),
        state.cut_int,
        state.novikov,
        state.last_incr,
        state.active,
        state.deact_step,
        noise,
        backend.as_index(noise_idx),
        state.alive,
        state.blow_step,
        int(step0),
        int(nsteps),
        n=grid.n,
        backend=which,
    )


_NOISE_BUDGET = 1 << 21  # complex entries per pre-drawn noise chunk


def run_batch(U0, grid, params, f, model, T, state, streams, noise_idx, on_sample, backend_name=None):
    """Advance the rows of ``U0`` to time ``T``, calling ``on_sample(step, U)``.

    ``streams[g]`` drives noise group ``g``; row ``b`` uses group
    ``noise_idx[b]`` (``-1`` for none). Samples are taken at step 0, every
    ``params.sample_every`` steps and at the final step. Noise is drawn in
    chunks whose size never changes the realised path.
    """
    U = np.ascontiguousarray(np.array(U0, dtype=complex))
    B, K = U.shape
    model = model or NoiseModel()
    scheme = params.resolved_scheme(model)
    nsteps = params.steps_for(T)
    every = int(params.sample_every)
    G = len(streams) if model.channels else 0
    chunk = max(1, min(nsteps, _NOISE_BUDGET // max(1, G * K)))
    noise_idx = np.asarray(noise_idx if G else np.full(B, -1), dtype=np.int64)
    empty = np.zeros((0, 0, K), dtype=complex)

    on_sample(0, U)
    done = 0
    noise = empty
    noise_start = 0
    while done < nsteps:
        if G and done - noise_start >= noise.shape[0]:
            count = min(chunk, nsteps - done)
            noise = np.ascontiguousarray(
                np.stack([model.draw(rng, K, params.dt, count) for rng in streams], axis=1)
            )
            noise_start = done
        next_sample = min(nsteps, (done // every + 1) * every)
        stop = min(next_sample, noise_start + noise.shape[0]) if G else next_sample
        block = noise[done - noise_start : stop - noise_start] if G else empty
        _advance(U, grid, params, scheme, f, state, np.ascontiguousarray(block), noise_idx, done, stop - done, backend_name)
        done = stop
        if done == next_sample:
            on_sample(done, U)
    return U


# records ------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Sampled observables of one trajectory."""

    times: np.ndarray
    series: dict
    final: SpectralField | None = None
    steps: int = 0
    blowup: BlowUpError | None = None

    def __getitem__(self, name):
        return self.series[name]

    @property
    def names(self):
        return list(self.series)


class _Sampler:
    def __init__(self, grid, dt, observers, rows):
        self.grid = grid
        self.dt = dt
        self.observers = observers
        self.rows = rows
        self.times = []
        self.values = {r: {name: [] for name in observers} for r in rows}

    def __call__(self, step, U):
        self.times.append(step * self.dt)
        for r in self.rows:
            u = SpectralField(self.grid, U[r])
            for name, fn in self.observers.items():
                self.values[r][name].append(fn(u))

    def series(self, r):
        return {name: np.asarray(v, dtype=float) for name, v in self.values[r].items()}


def integrate(u0: SpectralField, params: SolverParams, f: SpectralField | None = None,
              model: NoiseModel | None = None, T: float = 1.0, observers=("l2",),
              stream_index: int = 0, backend_name: str | None = None) -> TrajectoryRecord:
    """Integrate one trajectory to time ``T``.

    The noise path comes from ``make_stream(params.seed, stream_index)``.
    Raises :class:`BlowUpError` if the state becomes non-finite.
    """
    if not T > 0:
        raise ValueError("horizon T must be positive")
    grid = u0.grid
    f = f if f is not None else zeros(grid)
    if f.grid != grid:
        raise GridMismatchError("u0 and f must share a grid")
    model = model or NoiseModel()
    model.amplitudes(grid.K)
    sampler = _Sampler(grid, params.dt, _observers(observers), [0])
    state = _BatchState.plain(1)
    U = run_batch(
        u0.coeffs[None, :], grid, params, f, model, T, state,
        [make_stream(params.seed, stream_index)], [0], sampler, backend_name,
    )
    if not state.alive[0]:
        s = int(state.blow_step[0])
        raise BlowUpError(s, (s + 1) * params.dt)
    return TrajectoryRecord(
        np.asarray(sampler.times), sampler.series(0), SpectralField(grid, U[0]), params.steps_for(T)
    )


# coupled pairs --------------------------------------------------------------


@dataclass(frozen=True)
class IndependentCopy:
    """Second trajectory solves the same equation with the same noise path."""


@dataclass(frozen=True)
class Nudged:
    """``v`` receives ``-lam P_N (v - u)``; a negative ``lam`` flips the feedback sign."""

    lam: float
    N: int


@dataclass(frozen=True)
class NudgedCutoff:
    """Nudging switched off once ``int_0^t ||P_N(v - u)||^2 ds`` reaches ``budget``."""

    lam: float
    N: int
    budget: float


@dataclass
class CoupledRecord:
    """Sampled series of a trajectory pair ``(u, v)``.

    ``series`` holds the norms of ``u``, ``v`` and ``w = v - u``, the modified
    Hamiltonian of ``w``, the running cutoff and Novikov integrals and any
    extra observables (prefixed ``u:`` / ``v:``). ``tau_star`` is the time the
    cutoff fired (``inf`` if it never did) and ``last_increment`` the final
    one-step increment of the cutoff integral, which bounds its overshoot.
    """

    times: np.ndarray
    series: dict
    coupling: object
    u_final: SpectralField | None = None
    v_final: SpectralField | None = None
    tau_star: float = math.inf
    novikov_bound: float = math.inf
    last_increment: float = 0.0
    tau_R: float | None = None
    blowup: BlowUpError | None = None
    extras: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.series[name]


def _coupling_rows(coupling, model, K):
    if isinstance(coupling, IndependentCopy):
        return _BatchState.plain(2), None
    if isinstance(coupling, (Nudged, NudgedCutoff)):
        N = int(coupling.N)
        if N < 0:
            raise ConfigurationError("projection level N must be >= 0")
        budget = math.inf
        inv_a2 = np.zeros(K)
        if isinstance(coupling, NudgedCutoff):
            budget = float(coupling.budget)
            if budget < 0:
                raise ConfigurationError("cutoff budget must be >= 0")
            if not model.covers(min(N, K)):
                raise ConfigurationError(
                    f"noise channels must cover modes 1..{N} with positive amplitude"
                )
        amp = model.amplitudes(K)
        covered = amp > 0
        inv_a2[covered] = 4.0 / amp[covered] ** 2
        inv_a2[min(N, K):] = 0.0
        state = _BatchState(
            partner=[-1, 0],
            lam=[0.0, float(coupling.lam)],
            nproj=[0, N],
            budget=[math.inf, budget],
            inv_a2=inv_a2,
        )
        amin = amp[: min(N, K)].min() if N > 0 and covered[: min(N, K)].all() else 0.0
        return state, amin
    raise TypeError(f"unknown coupling {coupling!r}")


def integrate_pair(u0: SpectralField, v0: SpectralField, coupling, params: SolverParams,
                   f: SpectralField | None = None, model: NoiseModel | None = None,
                   T: float = 1.0, observers=(), stream_index: int = 0,
                   fparams: FunctionalParams | None = None,
                   backend_name: str | None = None, raise_on_blowup: bool = True) -> CoupledRecord:
    """Advance ``u`` and a coupled ``v`` with identical noise increments."""
    if not T > 0:
        raise ValueError("horizon T must be positive")
    if u0.grid != v0.grid:
        raise GridMismatchError("u0 and v0 must share a grid")
    grid = u0.grid
    f = f if f is not None else zeros(grid)
    model = model or NoiseModel()
    state, amin = _coupling_rows(coupling, model, grid.K)
    fp_alpha = (fparams or FunctionalParams()).fp_alpha_bar
    extra = _observers(observers)

    times, cols = [], {}

    def push(name, value):
        cols.setdefault(name, []).append(value)

    def sample(step, U):
        times.append(step * params.dt)
        u = SpectralField(grid, U[0])
        v = SpectralField(grid, U[1])
        w = v - u
        for tag, x in (("u", u), ("v", v)):
            push(f"{tag}_l2", sobolev_norm(x, 0))
            push(f"{tag}_h1", sobolev_norm(x, 1))
            push(f"{tag}_h2", sobolev_norm(x, 2))
        push("diff_l2", sobolev_norm(w, 0))
        push("diff_h1", sobolev_norm(w, 1))
        push("diff_h2", sobolev_norm(w, 2))
        push("fp", fp_functional(w, u, fp_alpha))
        push("fp_sandwich_ok", float(fp_sandwich_check(w, u, fp_alpha)))
        push("cutoff_integral", float(state.cut_int[1]))
        push("novikov", float(state.novikov[1]))
        push("nudging_active", float(state.active[1] and not isinstance(coupling, IndependentCopy)))
        for name, fn in extra.items():
            push(f"u:{name}", fn(u))
            push(f"v:{name}", fn(v))

    U = run_batch(
        np.stack([u0.coeffs, v0.coeffs]), grid, params, f, model, T, state,
        [make_stream(params.seed, stream_index)], [0, 0], sample, backend_name,
    )
    rec = CoupledRecord(
        times=np.asarray(times),
        series={k: np.asarray(v, dtype=float) for k, v in cols.items()},
        coupling=coupling,
        u_final=SpectralField(grid, U[0]),
        v_final=SpectralField(grid, U[1]),
        extras={"gamma": params.gamma},
    )
    if state.deact_step[1] >= 0:
        rec.tau_star = float(state.deact_step[1] * params.dt)
    if isinstance(coupling, NudgedCutoff) and amin:
        rec.novikov_bound = coupling.lam**2 / (math.pi * amin**2) * float(state.cut_int[1])
    rec.last_increment = float(state.last_incr[1])
    if not state.alive.all():
        s = int(state.blow_step[state.blow_step >= 0].min())
        rec.blowup = BlowUpError(s, (s + 1) * params.dt)
        if raise_on_blowup:
            raise rec.blowup
    return rec


def regularization_sweep(u0: SpectralField, params: SolverParams, f=None, model=None, T: float = 1.0,
                         epsilons=(1e-2, 5e-3, 2.5e-3), m: int = 2, backend_name=None):
    """Sup-in-time ``H^m`` gaps ``||v^eps - v^{eps/2}||`` along one noise path.

    Every run shares ``params`` (so the seed and step) and differs only in
    ``epsilon``. Returns one gap per entry of ``epsilons``.
    """
    snaps = {}
    for eps in sorted({e for x in epsilons for e in (x, x / 2)}, reverse=True):
        p = SolverParams(**{**params.__dict__, "epsilon": eps})
        kept = []
        integrate(u0, p, f, model, T, observers=[("_", lambda u: kept.append(u) or 0.0)],
                  backend_name=backend_name)
        snaps[eps] = kept
    return [
        max(sobolev_norm(a - b, m) for a, b in zip(snaps[e], snaps[e / 2])) for e in epsilons
    ]
