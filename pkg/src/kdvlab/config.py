"""Strict JSON run configuration.

Layout (only ``grid.K``, ``solver.dt`` and ``solver.T`` are required)::

    {
      "equation":   {"gamma": 0.5, "epsilon": 0, "f": [[1, 0.5]], "noise": [[1, 0.1]]},
      "grid":       {"K": 32, "n": 128},
      "solver":     {"dt": 1e-3, "T": 20, "burn_in": 0, "sample_every": 1,
                     "seed": 0, "scheme": "auto", "nonlinearity": true},
      "initial":    {"u0": [[1, 0.3]], "v0": [[2, 0, -0.4]], "u0_list": [...]},
      "experiment": {"lambda": "auto", "N": "auto", ...},
      "output":     {"dir": "out", "formats": ["csv", "json"]}
    }

Modes are ``[k, re]`` or ``[k, re, im]`` for the coefficient ``c_k`` of
``2 Re(c_k e^{ikx})``, so ``cos x`` is ``[[1, 0.5]]``. Noise channels are
``[k, a]``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

from .functionals import FunctionalParams
from .integrator import NoiseModel, SolverParams
from .nudging import default_nudge_params
from .spectral import Grid, SpectralField, field_from_modes, sobolev_norm

__all__ = ["ValidationError", "RunConfig", "parse_config", "load_config"]

log = logging.getLogger(__name__)


class ValidationError(ValueError):
    """Malformed configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


_SECTIONS = {
    "equation": {"gamma", "epsilon", "f", "noise"},
    "grid": {"K", "n"},
    "solver": {"dt", "T", "burn_in", "sample_every", "seed", "scheme", "nonlinearity"},
    "initial": {"u0", "v0", "u0_list"},
    "experiment": {
        "name", "lambda", "N", "c", "c0", "K_budget", "R", "beta", "eta0",
        "alpha_bar", "q_bar", "fp_alpha_bar", "members", "pairs", "observables",
        "k", "window", "target", "seeds", "N_max", "threshold", "mode", "tol",
    },
    "output": {"dir", "formats"},
}
_FORMATS = {"csv", "json", "final_state"}


def _reject_constant(name):
    raise ValidationError("<document>", f"non-finite constant {name} is not valid JSON")


def _unique_keys(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValidationError(k, "duplicate key")
        out[k] = v
    return out


def _number(d, key, path, default=None, *, positive=False, nonneg=False, integer=False):
    if key not in d:
        if default is None:
            raise ValidationError(f"{path}.{key}", "required key missing")
        return default
    v = d[key]
    kinds = (int,) if integer else (int, float)
    if isinstance(v, bool) or not isinstance(v, kinds):
        raise ValidationError(f"{path}.{key}", f"expected {'an integer' if integer else 'a number'}, got {v!r}")
    if positive and not v > 0:
        raise ValidationError(f"{path}.{key}", "must be positive")
    if nonneg and v < 0:
        raise ValidationError(f"{path}.{key}", "must be nonnegative")
    return v


def _modes(entries, path, K):
    if not isinstance(entries, list):
        raise ValidationError(path, "expected a list of [k, re] or [k, re, im]")
    out = []
    for i, e in enumerate(entries):
        where = f"{path}[{i}]"
        if not isinstance(e, list) or len(e) not in (2, 3):
            raise ValidationError(where, "expected [k, re] or [k, re, im]")
        k, *parts = e
        if isinstance(k, bool) or not isinstance(k, int):
            raise ValidationError(where, f"wavenumber must be an integer, got {k!r}")
        if not 1 <= k <= K:
            raise ValidationError(where, f"mode k={k} outside 1..{K}")
        if any(isinstance(p, bool) or not isinstance(p, (int, float)) for p in parts):
            raise ValidationError(where, "coefficient parts must be numbers")
        out.append((k, complex(parts[0], parts[1] if len(parts) == 2 else 0.0)))
    ks = [k for k, _ in out]
    if len(set(ks)) != len(ks):
        raise ValidationError(path, f"duplicate wavenumbers in {ks}")
    return out


def _noise(entries, K):
    path = "equation.noise"
    if not isinstance(entries, list):
        raise ValidationError(path, "expected a list of [k, a]")
    chans = []
    for i, e in enumerate(entries):
        where = f"{path}[{i}]"
        if not isinstance(e, list) or len(e) != 2:
            raise ValidationError(where, "expected [k, a]")
        k, a = e
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            raise ValidationError(where, f"wavenumber must be a positive integer, got {k!r}")
        if k > K:
            raise ValidationError(where, f"noise channel k={k} exceeds K={K}")
        if isinstance(a, bool) or not isinstance(a, (int, float)) or a < 0:
            raise ValidationError(where, f"amplitude must be a nonnegative number, got {a!r}")
        chans.append((k, float(a)))
    ks = [k for k, _ in chans]
    if len(set(ks)) != len(ks):
        raise ValidationError(path, f"duplicate noise channels {ks}")
    return NoiseModel(tuple(chans))


def _index_map(d, path):
    if not isinstance(d, dict):
        raise ValidationError(path, "expected an object keyed by m")
    out = {}
    for m, v in d.items():
        if m not in ("0", "1", "2"):
            raise ValidationError(f"{path}.{m}", "m must be 0, 1 or 2")
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
            raise ValidationError(f"{path}.{m}", "expected a nonnegative number")
        out[int(m)] = float(v)
    return out


@dataclass
class Experiment:
    """Experiment-specific knobs; unused entries are ignored by a given command."""

    name: str | None = None
    lam: float | None = None
    N: int | None = None
    lam_auto: bool = False
    N_auto: bool = False
    c: float = 1.0
    c0: float = 1.0
    K_budget: float | None = None
    R: float = 0.0
    beta: float = 0.0
    members: int = 100
    pairs: int = 20
    observables: tuple = ("l2", "h1", "h2")
    k: int = 0
    window: tuple | None = None
    target: float = 1e-3
    seeds: tuple = (0, 1, 2, 3, 4)
    N_max: int | None = None
    threshold: float = 1e-4
    mode: str = "determining"
    tol: float = 1e-6


@dataclass
class RunConfig:
    grid: Grid
    solver: SolverParams
    T: float
    burn_in: float
    f: SpectralField
    noise: NoiseModel
    u0: SpectralField
    v0: SpectralField
    u0_list: list
    experiment: Experiment
    fparams: FunctionalParams
    out_dir: str = "out"
    formats: tuple = ("csv", "json")
    raw: dict = field(default_factory=dict, repr=False)

    def with_seed(self, seed: int) -> "RunConfig":
        solver = replace(self.solver, seed=seed)
        raw = json.loads(json.dumps(self.raw))
        raw["solver"]["seed"] = seed
        return replace(self, solver=solver, raw=raw)

    def echo(self) -> dict:
        """Normalised configuration with every default filled in."""
        return self.raw


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON document; raises :class:`ValidationError`."""
    try:
        doc = json.loads(text, parse_constant=_reject_constant, object_pairs_hook=_unique_keys)
    except json.JSONDecodeError as exc:
        raise ValidationError("<document>", f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError("<document>", "top level must be an object")
    for key, value in doc.items():
        if key not in _SECTIONS:
            raise ValidationError(key, "unknown key")
        if not isinstance(value, dict):
            raise ValidationError(key, "expected an object")
        for sub in value:
            if sub not in _SECTIONS[key]:
                raise ValidationError(f"{key}.{sub}", "unknown key")

    eq = doc.get("equation", {})
    gd = doc.get("grid", {})
    sv = doc.get("solver", {})
    ini = doc.get("initial", {})
    ex = doc.get("experiment", {})
    outd = doc.get("output", {})
    if "grid" not in doc:
        raise ValidationError("grid.K", "required key missing")
    if "solver" not in doc:
        raise ValidationError("solver.dt", "required key missing")

    K = _number(gd, "K", "grid", integer=True, positive=True)
    n = _number(gd, "n", "grid", 0, integer=True, nonneg=True)
    try:
        grid = Grid(K, n)
    except ValueError as exc:
        raise ValidationError("grid.n", str(exc)) from None

    gamma = float(_number(eq, "gamma", "equation", 0.5, nonneg=True))
    epsilon = float(_number(eq, "epsilon", "equation", 0.0, nonneg=True))
    f = field_from_modes(grid, _modes(eq.get("f", []), "equation.f", K))
    noise = _noise(eq.get("noise", []), K)

    dt = float(_number(sv, "dt", "solver", positive=True))
    T = float(_number(sv, "T", "solver", positive=True))
    burn_in = float(_number(sv, "burn_in", "solver", 0.0, nonneg=True))
    sample_every = _number(sv, "sample_every", "solver", 1, integer=True, positive=True)
    seed = _number(sv, "seed", "solver", 0, integer=True, nonneg=True)
    if seed >= 2**64:
        raise ValidationError("solver.seed", "must fit in 64 unsigned bits")
    scheme = sv.get("scheme", "auto")
    if scheme not in ("auto", "eem", "etdrk4"):
        raise ValidationError("solver.scheme", f"unknown scheme {scheme!r}")
    nonlin = sv.get("nonlinearity", True)
    if not isinstance(nonlin, bool):
        raise ValidationError("solver.nonlinearity", "expected true or false")
    if burn_in >= T:
        raise ValidationError("solver.burn_in", "must be smaller than T")
    solver = SolverParams(dt=dt, gamma=gamma, epsilon=epsilon, nonlinearity_on=nonlin,
                          seed=seed, sample_every=sample_every, scheme=scheme)
    if dt * K**3 > 2 * math.pi:
        log.info("dispersive phase per step dt*K^3 = %.3g exceeds 2 pi; the linear part is "
                 "integrated exactly, but nonlinear accuracy may suffer", dt * K**3)

    u0 = field_from_modes(grid, _modes(ini.get("u0", []), "initial.u0", K))
    v0 = field_from_modes(grid, _modes(ini.get("v0", []), "initial.v0", K))
    u0_list = []
    if "u0_list" in ini:
        if not isinstance(ini["u0_list"], list):
            raise ValidationError("initial.u0_list", "expected a list of mode lists")
        u0_list = [field_from_modes(grid, _modes(m, f"initial.u0_list[{i}]", K))
                   for i, m in enumerate(ini["u0_list"])]

    exp = _experiment(ex, gamma, f, noise, K)
    fparams = FunctionalParams(
        alpha_bar=_index_map(ex.get("alpha_bar", {}), "experiment.alpha_bar"),
        q_bar=_index_map(ex.get("q_bar", {}), "experiment.q_bar"),
        fp_alpha_bar=float(_number(ex, "fp_alpha_bar", "experiment", 10.0, nonneg=True)),
        eta0=float(_number(ex, "eta0", "experiment", 0.1, nonneg=True)),
    )

    out_dir = outd.get("dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ValidationError("output.dir", "expected a nonempty string")
    formats = outd.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or any(x not in _FORMATS for x in formats):
        raise ValidationError("output.formats", f"expected a subset of {sorted(_FORMATS)}")

    raw = {
        "equation": {
            "gamma": gamma, "epsilon": epsilon,
            "f": [[k, c.real, c.imag] for k, c in f.modes()],
            "noise": [[k, a] for k, a in noise.channels],
        },
        "grid": {"K": K, "n": grid.n},
        "solver": {"dt": dt, "T": T, "burn_in": burn_in, "sample_every": sample_every,
                   "seed": seed, "scheme": scheme, "nonlinearity": nonlin},
        "initial": {
            "u0": [[k, c.real, c.imag] for k, c in u0.modes()],
            "v0": [[k, c.real, c.imag] for k, c in v0.modes()],
            "u0_list": [[[k, c.real, c.imag] for k, c in u.modes()] for u in u0_list],
        },
        "experiment": _experiment_echo(exp, fparams),
        "output": {"dir": out_dir, "formats": list(formats)},
    }
    return RunConfig(grid, solver, T, burn_in, f, noise, u0, v0, u0_list, exp, fparams,
                     out_dir, tuple(formats), raw)


def _experiment(ex, gamma, f, noise, K) -> Experiment:
    e = Experiment()
    p = "experiment"
    if "name" in ex:
        if not isinstance(ex["name"], str):
            raise ValidationError(f"{p}.name", "expected a string")
        e.name = ex["name"]
    e.c = float(_number(ex, "c", p, 1.0, positive=True))
    e.c0 = float(_number(ex, "c0", p, 1.0, positive=True))
    # omitted lambda/N follow the rule when it applies and stay unset otherwise
    for key in ("lambda", "N"):
        v = ex.get(key)
        if isinstance(v, str) and v != "auto":
            raise ValidationError(f"{p}.{key}", f"expected a number or \"auto\", got {v!r}")
    explicit = {key: ex.get(key) == "auto" for key in ("lambda", "N")}
    e.lam_auto = explicit["lambda"] or ("lambda" not in ex and gamma > 0)
    e.N_auto = explicit["N"] or ("N" not in ex and gamma > 0)
    if (explicit["lambda"] or explicit["N"]) and gamma <= 0:
        raise ValidationError(f"{p}.{'lambda' if explicit['lambda'] else 'N'}",
                              "the parameter rule needs gamma > 0")
    if e.lam_auto or e.N_auto:
        rule_lam, rule_N = default_nudge_params(gamma, sobolev_norm(f, 1), noise.sigma_l2_sq, e.c)
    if e.lam_auto:
        e.lam = float(rule_lam)
    elif "lambda" in ex:
        e.lam = float(_number(ex, "lambda", p, nonneg=True))
    if e.N_auto:
        e.N = rule_N
        if rule_N > K:
            log.info("rule gives N=%d > K=%d; projection covers every mode", rule_N, K)
    elif "N" in ex:
        e.N = _number(ex, "N", p, integer=True, nonneg=True)
    if ex.get("K_budget") is not None:
        e.K_budget = float(_number(ex, "K_budget", p, nonneg=True))
    e.R = float(_number(ex, "R", p, 0.0, nonneg=True))
    e.beta = float(_number(ex, "beta", p, 0.0, nonneg=True))
    e.members = _number(ex, "members", p, 100, integer=True, positive=True)
    e.pairs = _number(ex, "pairs", p, 20, integer=True, positive=True)
    if "observables" in ex:
        obs = ex["observables"]
        if not isinstance(obs, list) or not all(isinstance(o, str) for o in obs):
            raise ValidationError(f"{p}.observables", "expected a list of names")
        from .integrator import OBSERVABLES

        bad = [o for o in obs if o not in OBSERVABLES]
        if bad:
            raise ValidationError(f"{p}.observables", f"unknown observables {bad}")
        e.observables = tuple(obs)
    e.k = _number(ex, "k", p, 0, integer=True, nonneg=True)
    if e.k > 2:
        raise ValidationError(f"{p}.k", "distance index must be 0, 1 or 2")
    if "window" in ex:
        w = ex["window"]
        if (not isinstance(w, list) or len(w) != 2
                or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in w) or w[0] >= w[1]):
            raise ValidationError(f"{p}.window", "expected [t0, t1] with t0 < t1")
        e.window = (float(w[0]), float(w[1]))
    e.target = float(_number(ex, "target", p, 1e-3, positive=True))
    if "seeds" in ex:
        s = ex["seeds"]
        if (not isinstance(s, list) or not s
                or any(isinstance(x, bool) or not isinstance(x, int) or x < 0 for x in s)):
            raise ValidationError(f"{p}.seeds", "expected a nonempty list of nonnegative integers")
        e.seeds = tuple(s)
    if "N_max" in ex:
        e.N_max = _number(ex, "N_max", p, integer=True, nonneg=True)
    e.threshold = float(_number(ex, "threshold", p, 1e-4, positive=True))
    e.tol = float(_number(ex, "tol", p, 1e-6, positive=True))
    mode = ex.get("mode", "determining")
    if mode not in ("determining", "steady", "attractor"):
        raise ValidationError(f"{p}.mode", f"unknown mode {mode!r}")
    e.mode = mode
    return e


def _experiment_echo(e: Experiment, fp: FunctionalParams) -> dict:
    d = asdict(e)
    d["lambda"] = d.pop("lam")
    d["observables"] = list(e.observables)
    d["seeds"] = list(e.seeds)
    d["window"] = list(e.window) if e.window else None
    d["alpha_bar"] = {str(m): v for m, v in sorted(fp.alpha_bar.items())}
    d["q_bar"] = {str(m): v for m, v in sorted(fp.q_bar.items())}
    d["fp_alpha_bar"] = fp.fp_alpha_bar
    d["eta0"] = fp.eta0
    return d


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
