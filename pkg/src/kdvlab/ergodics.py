"""Monte Carlo estimators over ensembles and long trajectories.

Every member owns the stream ``make_stream(seed, index)``; members are
split into contiguous chunks for threads and results are reassembled in
index order, so aggregates do not depend on the thread count.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .functionals import DomainError, FunctionalParams, modified_invariant
from .integrator import (
    BlowUpError,
    IndependentCopy,
    NoiseModel,
    SolverParams,
    TrajectoryRecord,
    _BatchState,
    _observers,
    _Sampler,
    integrate_pair,
    make_stream,
    run_batch,
)
from .spectral import SpectralField, sobolev_norm, zeros

log = logging.getLogger(__name__)

__all__ = [
    "EnsembleConfig",
    "EnsembleResult",
    "DistanceEstimate",
    "MomentSeries",
    "TailFit",
    "run_ensemble",
    "run_pair_ensemble",
    "ensemble_mean",
    "mean_l2_oracle",
    "moment_series",
    "coupling_distance",
    "distance_observers",
    "coupling_distance_series",
    "log_slope",
    "kb_average",
    "kb_average_with_error",
    "spectral_tail_fit",
]


@dataclass(frozen=True)
class EnsembleConfig:
    members: int
    seed: int = 0
    T: float = 1.0
    burn_in: float = 0.0
    observables: tuple = ("l2_sq",)
    threads: int = 1

    def __post_init__(self):
        if self.members < 1:
            raise ValueError("members must be >= 1")
        if not 0 <= self.burn_in < self.T:
            raise ValueError("need 0 <= burn_in < T")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class EnsembleResult:
    records: list
    failures: dict = field(default_factory=dict)

    @property
    def survivors(self):
        return [r for r in self.records if r is not None]


def _chunks(M, threads):
    bounds = np.linspace(0, M, min(threads, M) + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def run_ensemble(cfg: EnsembleConfig, u0, params: SolverParams, f=None,
                 model: NoiseModel | None = None, backend_name=None) -> EnsembleResult:
    """``cfg.members`` independent trajectories from ``u0`` (one field or one per member)."""
    inits = list(u0) if isinstance(u0, (list, tuple)) else [u0] * cfg.members
    if len(inits) != cfg.members:
        raise ValueError("need one initial field per member")
    grid = inits[0].grid
    f = f if f is not None else zeros(grid)
    model = model or NoiseModel()
    model.amplitudes(grid.K)
    obs = _observers(cfg.observables)

    def work(lo, hi):
        rows = list(range(hi - lo))
        sampler = _Sampler(grid, params.dt, obs, rows)
        state = _BatchState.plain(hi - lo)
        U = run_batch(
            np.stack([inits[i].coeffs for i in range(lo, hi)]), grid, params, f, model, cfg.T,
            state, [make_stream(cfg.seed, i) for i in range(lo, hi)], rows, sampler, backend_name,
        )
        out = []
        for r in rows:
            if state.alive[r]:
                out.append(TrajectoryRecord(np.asarray(sampler.times), sampler.series(r),
                                            SpectralField(grid, U[r]), params.steps_for(cfg.T)))
            else:
                s = int(state.blow_step[r])
                out.append(BlowUpError(s, (s + 1) * params.dt, member=lo + r))
        return out

    spans = _chunks(cfg.members, cfg.threads)
    if len(spans) == 1:
        parts = [work(*spans[0])]
    else:
        with ThreadPoolExecutor(len(spans)) as pool:
            parts = list(pool.map(lambda s: work(*s), spans))
    records, failures = [], {}
    for item in (x for part in parts for x in part):
        if isinstance(item, BlowUpError):
            failures[item.member] = item
            records.append(None)
        else:
            records.append(item)
    if failures:
        log.warning("%d of %d members blew up; aggregating over survivors", len(failures), cfg.members)
    return EnsembleResult(records, failures)


def run_pair_ensemble(pairs: int, u0, v0, params: SolverParams, f=None, model=None, T=1.0,
                      coupling=None, seed: int = 0, fparams: FunctionalParams | None = None,
                      threads: int = 1, backend_name=None):
    """``pairs`` synchronously coupled pairs; pair ``i`` uses stream ``(seed, i)``.

    Each pair records ``I_2^+`` of both members so :func:`coupling_distance_series`
    can be applied. Failed pairs are returned as ``None``.
    """
    coupling = coupling or IndependentCopy()
    p = SolverParams(**{**params.__dict__, "seed": seed})
    obs = distance_observers(fparams)

    def one(i):
        u = u0[i] if isinstance(u0, (list, tuple)) else u0
        v = v0[i] if isinstance(v0, (list, tuple)) else v0
        rec = integrate_pair(u, v, coupling, p, f, model, T, observers=obs, stream_index=i,
                             fparams=fparams, backend_name=backend_name, raise_on_blowup=False)
        return None if rec.blowup is not None else rec

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(pairs)))
    return [one(i) for i in range(pairs)]


def ensemble_mean(result: EnsembleResult, name: str):
    """Per-sample mean and standard error of observable ``name`` over survivors."""
    recs = result.survivors
    data = np.stack([r.series[name] for r in recs])
    M = data.shape[0]
    se = data.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros(data.shape[1])
    return recs[0].times, data.mean(axis=0), se


def mean_l2_oracle(gamma: float, sigma_l2_sq: float, e0: float, t):
    """Solution of ``dE/dt = -2 gamma E + ||sigma||^2`` with ``E(0) = e0``."""
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    t = np.asarray(t, dtype=float)
    decay = np.exp(-2 * gamma * t)
    out = decay * e0 + (1 - decay) * sigma_l2_sq / (2 * gamma)
    return float(out) if out.ndim == 0 else out


@dataclass
class MomentSeries:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    log_mean: np.ndarray | None = None
    overflow: np.ndarray | None = None


def moment_series(records, m: int, p: float, eta: float | None = None) -> MomentSeries:
    """Monte Carlo ``E I_m^+(u(t))^p`` or, with ``eta``, ``E exp(eta I_m^+(u(t))^p)``.

    Records must carry an ``"I{m}+"`` series. The exponential moment is formed
    by log-sum-exp; ``overflow[i]`` counts members whose own exponential
    overflows a double at sample ``i``.
    """
    recs = [r for r in records if r is not None]
    X = np.stack([np.asarray(r.series[f"I{m}+"], dtype=float) for r in recs])
    M = X.shape[0]
    Y = X**p
    times = recs[0].times
    if eta is None:
        se = Y.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros(Y.shape[1])
        return MomentSeries(times, Y.mean(axis=0), se)
    Z = eta * Y
    top = Z.max(axis=0)
    scaled = np.exp(Z - top)
    log_mean = top + np.log(scaled.mean(axis=0))
    rel_se = scaled.std(axis=0, ddof=1) / math.sqrt(M) / scaled.mean(axis=0) if M > 1 else np.zeros_like(top)
    with np.errstate(over="ignore"):
        mean = np.exp(log_mean)
    se = mean * rel_se
    return MomentSeries(times, mean, se, log_mean, (Z > 709.0).sum(axis=0))


def coupling_distance(u: SpectralField, v: SpectralField, k: int, fparams: FunctionalParams | None = None) -> float:
    """``exp(eta0 (I_2^+(u)^{3/7} + I_2^+(v)^{3/7})) ||u - v||_{H^k}``."""
    fp = fparams or FunctionalParams()
    weight = modified_invariant(u, 2, fp) ** (3 / 7) + modified_invariant(v, 2, fp) ** (3 / 7)
    return math.exp(fp.eta0 * weight) * sobolev_norm(u - v, k)


def distance_observers(fparams: FunctionalParams | None = None):
    fp = fparams or FunctionalParams()
    return [("I2+", lambda u: modified_invariant(u, 2, fp))]


@dataclass
class DistanceEstimate:
    """Mean of ``d_k`` over synchronously coupled pairs; an upper bound on the coupling distance."""

    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    slope: float
    intercept: float
    window: tuple


def log_slope(times, values, window=None):
    """OLS slope and intercept of ``log(values)`` against time.

    The default window drops the first 10% of samples.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = (times[0] + 0.1 * (times[-1] - times[0]), times[-1])
    sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12) & (values > 0)
    if sel.sum() < 2:
        return math.nan, math.nan, window
    slope, intercept = np.polyfit(times[sel], np.log(values[sel]), 1)
    return float(slope), float(intercept), window


def coupling_distance_series(pair_records, k: int, fparams: FunctionalParams | None = None,
                             window=None) -> DistanceEstimate:
    fp = fparams or FunctionalParams()
    recs = [r for r in pair_records if r is not None]
    norm = {0: "diff_l2", 1: "diff_h1", 2: "diff_h2"}[k]
    D = np.stack([
        np.exp(fp.eta0 * (r.series["u:I2+"] ** (3 / 7) + r.series["v:I2+"] ** (3 / 7))) * r.series[norm]
        for r in recs
    ])
    M = D.shape[0]
    mean = D.mean(axis=0)
    se = D.std(axis=0, ddof=1) / math.sqrt(M) if M > 1 else np.zeros_like(mean)
    slope, intercept, window = log_slope(recs[0].times, mean, window)
    return DistanceEstimate(recs[0].times, mean, se, slope, intercept, window)


def _window(record, T, burn_in):
    t = np.asarray(record.times)
    end = burn_in + T
    if end > t[-1] + 1e-9:
        raise ValueError(f"window end {end} beyond record horizon {t[-1]}")
    sel = (t >= burn_in - 1e-12) & (t <= end + 1e-12)
    return t[sel], sel


def _values(record, observable):
    if callable(observable):
        return np.asarray(observable(record), dtype=float)
    return np.asarray(record.series[observable], dtype=float)


def kb_average(record, observable, T: float, burn_in: float = 0.0) -> float:
    """Time average ``(1/T) int_{b}^{b+T} phi(u(t)) dt`` by the trapezoid rule on the samples.

    ``observable`` is a series name or a callable mapping the record to an
    array of per-sample values.
    """
    t, sel = _window(record, T, burn_in)
    y = _values(record, observable)[sel]
    if len(t) == 1:
        return float(y[0])
    return float(np.trapezoid(y, t) / (t[-1] - t[0]))


def kb_average_with_error(record, observable, T: float, burn_in: float = 0.0, batches: int = 20):
    """Time average plus a batch-means standard error."""
    t, sel = _window(record, T, burn_in)
    y = _values(record, observable)[sel]
    mean = kb_average(record, observable, T, burn_in)
    parts = np.array_split(np.arange(len(y)), batches)
    bm = np.array([y[idx].mean() for idx in parts if len(idx)])
    return mean, float(bm.std(ddof=1) / math.sqrt(len(bm)))


@dataclass
class TailFit:
    geometric_slope: float
    geometric_intercept: float
    geometric_residual: float
    algebraic_slope: float
    algebraic_intercept: float
    algebraic_residual: float
    modes_used: int
    degenerate: bool = False

    @property
    def prefers_geometric(self) -> bool:
        return not self.degenerate and self.geometric_residual < self.algebraic_residual


def spectral_tail_fit(u: SpectralField, k_min: int, floor: float = 1e-13) -> TailFit:
    """Fit ``log|u_k|`` for ``k >= k_min`` linearly in ``k`` and in ``log k``.

    Coefficients below ``floor`` times the largest one are treated as round-off
    and left out. Residuals are root-mean-square.
    """
    if not 1 <= k_min < u.grid.K:
        raise ValueError("need 1 <= k_min < K")
    a = np.abs(u.coeffs)
    k = u.grid.wavenumbers
    top = a.max()
    sel = (k >= k_min) & (a > floor * top) if top > 0 else np.zeros_like(k, dtype=bool)
    if sel.sum() < 3:
        nan = math.nan
        return TailFit(nan, nan, nan, nan, nan, nan, int(sel.sum()), degenerate=True)
    y = np.log(a[sel])

    def fit(x):
        coef, res, *_ = np.polyfit(x, y, 1, full=True)
        rms = math.sqrt(res[0] / len(y)) if len(res) else 0.0
        return float(coef[0]), float(coef[1]), rms

    g = fit(k[sel])
    al = fit(np.log(k[sel]))
    return TailFit(*g, *al, int(sel.sum()))
