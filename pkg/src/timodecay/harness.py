"""Configuration loading, experiment orchestration and deterministic output.

A run is described by one JSON document with the blocks ``theorem_inputs``
(or ``coefficients``), ``kernel``, ``sim``, ``initial`` and ``experiment``.
Every output file carries the SHA-256 digest of the canonicalised config.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from .coefficients import Coefficients, build_theorem_coeffs, exploratory_coeffs, m0
from .discretization import GalerkinSystem, InitialData, delay_steps
from .errors import (
    ConfigurationError,
    FitDomainError,
    OutsideTheoremError,
    SelectionFailureError,
    TimoDecayError,
    UndefinedRatioError,
)
from .functionals import (
    CSV_COLUMNS,
    LyapunovConstants,
    evaluate_trace,
    equivalence_estimate,
    fit_decay,
    monotone_violations,
    select_constants,
)
from .integrator import RunTrace, SimConfig, run
from .kernels import (
    RelaxationKernel,
    ScalarHistory,
    check_hypotheses,
    exponential_kernel,
    product_identity_residual,
    cauchy_schwarz_slack,
    load_kernel_csv,
    power_kernel,
)

log = logging.getLogger(__name__)

THREADS_ENV = "TIMODECAY_THREADS"
FIT_BURN_IN = 0.1  # default fit start as a fraction of t_end
PRESETS = ("sine-bump", "poly-bump", "thermal-cosine", "random-modes", "zero", "csv")
EXPERIMENTS = ("simulate", "refine", "sweep", "verify-kernels")
PROFILE_FIELDS = ("phi0", "phi1", "psi0", "psi1", "theta0", "theta1")

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_ZETA_PROFILE = {"enum": ["constant", "hyperbolic"]}



def _family_branch(family: str, props: dict, required: list[str]) -> dict:
    return {
        "if": {"properties": {"family": {"const": family}}},
        "then": {
            "properties": {"family": True, **props},
            "required": required,
            "additionalProperties": False,
        },
    }


CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["kernel", "sim"],
    "oneOf": [{"required": ["theorem_inputs"]}, {"required": ["coefficients"]}],
    "properties": {
        "exploratory": {"type": "boolean"},
        "theorem_inputs": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rho1", "rho2", "rho3", "K", "b", "delta", "mu1", "mu2", "tau"],
            "properties": {
                **{k: _POS for k in ("rho1", "rho2", "rho3", "K", "b", "delta", "mu1", "tau", "xi")},
                "mu2": _NONNEG,
            },
        },
        "coefficients": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rho1", "rho2", "rho3", "K", "b", "beta", "gamma", "delta", "mu1", "mu2", "tau"],
            "properties": {
                **{k: _POS for k in ("rho1", "rho2", "rho3", "K", "b", "delta", "tau", "xi")},
                **{k: _NONNEG for k in ("beta", "gamma", "mu1", "mu2")},
            },
        },
        "kernel": {
            "type": "object",
            "required": ["family"],
            "properties": {"family": {"enum": ["exponential", "power", "tabulated"]}},
            "allOf": [
                _family_branch(
                    "exponential",
                    {"g0": _NONNEG, "rate": _NONNEG, "zeta": _NONNEG, "zeta_profile": _ZETA_PROFILE},
                    ["g0", "rate"],
                ),
                _family_branch(
                    "power",
                    {"g0": _NONNEG, "exponent": _POS, "zeta_scale": _NONNEG, "zeta_profile": _ZETA_PROFILE},
                    ["g0", "exponent"],
                ),
                _family_branch(
                    "tabulated",
                    {"csv": {"type": "string"}, "gbar": _NONNEG, "infinite_mass": {"type": "boolean"}},
                    ["csv"],
                ),
            ],
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "dt", "t_end"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "dt": _POS,
                "t_end": _NONNEG,
                "backend": {"enum": ["ringbuffer", "transport"]},
                "record_stride": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "m_rho": {"type": ["integer", "null"], "minimum": 1},
                "memory": {"enum": ["auto", "recursive", "quadrature"]},
                "progress_every": _NONNEG,
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(PRESETS)},
                "amplitude": {"type": "number"},
                "modes": {"type": "integer", "minimum": 1},
                "csv": {"type": "string"},
                "history": {"enum": ["zero", "hold"]},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(EXPERIMENTS)},
                "fit": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "t0": {"type": ["number", "null"], "minimum": 0},
                        "t1": {"type": ["number", "null"]},
                        "weighted": {"type": "boolean"},
                    },
                },
                "lyapunov": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"enabled": {"type": "boolean"}, "t0": _NONNEG},
                },
                "refine": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "levels": {"type": "integer", "minimum": 2},
                        "axes": {"type": "array", "items": {"enum": ["dt", "n"]}, "minItems": 1},
                    },
                },
                "sweep": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["param", "values"],
                    "properties": {
                        "param": {"type": "string"},
                        "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                    },
                },
                "verify": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "seed": {"type": "integer", "minimum": 0},
                        "trials": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
    },
}

_SIM_DEFAULTS = dict(
    backend="ringbuffer", record_stride=1, seed=0, m_rho=None, memory="auto", progress_every=0.0
)
_INITIAL_DEFAULTS = dict(preset="sine-bump", amplitude=1.0, modes=4, history="zero")
_EXPERIMENT_DEFAULTS = dict(
    kind="simulate",
    fit=dict(t0=None, t1=None, weighted=True),
    lyapunov=dict(enabled=True, t0=1.0),
    refine=dict(levels=3, axes=["dt", "n"]),
    verify=dict(seed=42, trials=100),
)


# -- validation report and loaded config ----------------------------------------------


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class LoadedConfig:
    """A fully validated configuration; ``raw`` is the canonical (defaulted) document."""

    raw: dict
    coeffs: Coefficients
    kernel: RelaxationKernel
    sim: SimConfig
    initial: InitialData
    experiment: dict
    report: list[Check]
    base_dir: Path

    @property
    def digest(self) -> str:
        return config_digest(self.raw)

    def report_dict(self) -> list[dict]:
        return [asdict(c) for c in self.report]


@dataclass
class RunManifest:
    digest: str
    kind: str
    coefficients: dict
    kernel: dict
    version: str
    outputs: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def code_version() -> str:
    from . import __version__

    return __version__


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_digest(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def _field_path(err: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def validate_schema(doc: Any) -> None:
    """Raise :class:`ConfigurationError` naming the offending field path."""
    if isinstance(doc, dict) and ("theorem_inputs" in doc) == ("coefficients" in doc):
        raise ConfigurationError("exactly one of 'theorem_inputs' or 'coefficients' is required", "$")
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(list(e.absolute_path)), str(e.absolute_path)))
    if not errors:
        return
    err = jsonschema.exceptions.best_match(errors)
    raise ConfigurationError(err.message, _field_path(err))


def _with_defaults(doc: dict) -> dict:
    raw = copy.deepcopy(doc)
    raw.setdefault("exploratory", False)
    raw["sim"] = {**_SIM_DEFAULTS, **raw["sim"]}
    raw["initial"] = {**_INITIAL_DEFAULTS, **raw.get("initial", {})}
    exp = copy.deepcopy(_EXPERIMENT_DEFAULTS)
    for key, value in raw.get("experiment", {}).items():
        exp[key] = {**exp[key], **value} if isinstance(exp.get(key), dict) else value
    raw["experiment"] = exp
    return raw


def build_kernel(spec: dict, base_dir: Path = Path(".")) -> RelaxationKernel:
    family = spec["family"]
    if family == "exponential":
        return exponential_kernel(spec["g0"], spec["rate"], spec.get("zeta"), spec.get("zeta_profile", "constant"))
    if family == "power":
        return power_kernel(
            spec["g0"], spec["exponent"], spec.get("zeta_scale"), spec.get("zeta_profile", "hyperbolic")
        )
    path = Path(spec["csv"])
    if not path.is_absolute():
        path = base_dir / path
    return load_kernel_csv(str(path), gbar=spec.get("gbar"), infinite_mass=spec.get("infinite_mass", False))


def build_coefficients(raw: dict, kernel: RelaxationKernel) -> Coefficients:
    exploratory = raw.get("exploratory", False)
    if "theorem_inputs" in raw:
        ti = {k: float(v) for k, v in raw["theorem_inputs"].items()}
        if ti["mu2"] > ti["mu1"] and not exploratory:
            raise OutsideTheoremError(
                f"mu2={ti['mu2']!r} > mu1={ti['mu1']!r}: the decay theorem requires mu2 <= mu1; "
                "set exploratory=true to run outside it"
            )
        if not exploratory:
            return build_theorem_coeffs(**ti, kernel=kernel)
        gamma = ti["b"] * ti["rho1"] / ti["K"] - ti["rho2"]
        beta = ti["delta"] - ti["K"] * ti["rho3"] / ti["rho1"]
        return exploratory_coeffs(**ti, beta=beta, gamma=gamma, kernel=kernel)
    co = {k: float(v) for k, v in raw["coefficients"].items()}
    if exploratory:
        return exploratory_coeffs(**co, kernel=kernel)
    if co["mu2"] > co["mu1"]:
        raise OutsideTheoremError(
            f"mu2={co['mu2']!r} > mu1={co['mu1']!r}: the decay theorem requires mu2 <= mu1; "
            "set exploratory=true to run outside it"
        )
    from .coefficients import select_xi

    xi = co.pop("xi", None)
    if xi is None:
        xi = select_xi(co["mu1"], co["mu2"], co["tau"])
    return Coefficients(**co, xi=xi, lam=co["delta"] - kernel.mass)


# -- initial data ------------------------------------------------------------------------------


def _scaled(f: Callable, a: float) -> Callable:
    return lambda x: a * f(x)


def _csv_profiles(path: Path) -> dict[str, Callable]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "x" not in reader.fieldnames:
            raise ConfigurationError("initial profile CSV needs an 'x' column", "$.initial.csv")
        rows = list(reader)
    unknown = set(reader.fieldnames) - {"x", *PROFILE_FIELDS}
    if unknown:
        raise ConfigurationError(f"unknown profile columns {sorted(unknown)}", "$.initial.csv")
    try:
        cols = {name: np.array([float(r[name]) for r in rows]) for name in reader.fieldnames}
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"non-numeric profile value: {exc}", "$.initial.csv") from None
    x = cols.pop("x")
    if x.size < 2 or np.any(np.diff(x) <= 0) or x[0] > 0 or x[-1] < 1:
        raise ConfigurationError("profile x must increase and cover [0, 1]", "$.initial.csv")
    return {name: (lambda s, v=v: np.interp(s, x, v)) for name, v in cols.items()}


def build_initial(spec: dict, n: int, seed: int, base_dir: Path = Path(".")) -> InitialData:
    """Initial profiles for a preset.

    All presets start with zero velocities, so the zero delay history is
    compatible with ``theta_t(0)``. ``history="hold"`` instead extends
    ``theta1`` constantly into the past.
    """
    a = float(spec["amplitude"])
    preset = spec["preset"]
    pi = math.pi
    prof: dict[str, Callable] = {}
    if preset == "sine-bump":
        prof["phi0"] = _scaled(lambda x: np.sin(pi * x) + 0.5 * np.sin(2 * pi * x), a)
        prof["psi0"] = _scaled(lambda x: 0.25 * np.sin(pi * x) ** 3, a)
    elif preset == "poly-bump":
        prof["phi0"] = _scaled(lambda x: 16 * x**2 * (1 - x) ** 2, a)
        prof["psi0"] = _scaled(lambda x: 8 * x * (1 - x) * (0.5 - x), a)
    elif preset == "thermal-cosine":
        prof["theta0"] = _scaled(lambda x: np.cos(pi * x), a)
    elif preset == "random-modes":
        rng = np.random.default_rng(seed)
        m = int(spec["modes"])
        k = np.arange(1, m + 1)
        decay = a * k ** -3.0
        cphi, cpsi, cth = (decay * rng.standard_normal(m) for _ in range(3))
        prof["phi0"] = lambda x, c=cphi: c @ np.sin(pi * np.outer(k, x))
        prof["psi0"] = lambda x, c=cpsi: c @ np.sin(pi * np.outer(k, x))
        # no constant mode: theta keeps zero mean
        prof["theta0"] = lambda x, c=cth: c @ np.cos(pi * np.outer(k, x))
    elif preset == "csv":
        if "csv" not in spec:
            raise ConfigurationError("preset 'csv' needs a 'csv' path", "$.initial.csv")
        path = Path(spec["csv"])
        prof = {k: _scaled(f, a) for k, f in _csv_profiles(path if path.is_absolute() else base_dir / path).items()}
    f0 = None
    if spec["history"] == "hold":
        theta1 = prof.get("theta1", lambda x: np.zeros_like(x))
        f0 = lambda x, s, f=theta1: f(x)  # noqa: E731
    return InitialData(**prof, f0=f0, label=preset)


# -- loading ----------------------------------------------------------------------------------


def load_config_dict(doc: Any, base_dir: Path | str = ".") -> LoadedConfig:
    """Validate a config document; module validators run before anything is simulated."""
    base_dir = Path(base_dir)
    validate_schema(doc)
    raw = _with_defaults(doc)
    report = [Check("schema", True)]
    try:
        kernel = build_kernel(raw["kernel"], base_dir)
    except TimoDecayError as exc:
        raise ConfigurationError(str(exc), "$.kernel") from exc
    report.append(Check("kernel", True, kernel.family))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        coeffs = build_coefficients(raw, kernel)
    for w in caught:
        log.warning("%s", w.message)
    report.append(
        Check(
            "coefficients",
            True,
            "theorem mode" if coeffs.theorem_mode else "exploratory" + (" (outside theorem)" if coeffs.outside_theorem else ""),
        )
    )
    s = raw["sim"]
    sim = SimConfig(**s)
    grid = np.linspace(0.0, max(sim.t_end, 1.0), 201)
    hyp = check_hypotheses(kernel, coeffs.delta, grid)
    report.append(Check("kernel_h1", hyp.h1_ok, f"lambda={hyp.lam!r}"))
    report.append(Check("kernel_h2", hyp.h2_ok, f"worst slack={hyp.worst_h2_slack!r}"))
    if coeffs.theorem_mode and not (hyp.h1_ok and hyp.h2_ok):
        raise ConfigurationError(
            f"kernel hypotheses fail in theorem mode: h1={hyp.h1_ok}, h2={hyp.h2_ok} "
            f"(lambda={hyp.lam!r}, worst g'+zeta g={hyp.worst_h2_slack!r})",
            "$.kernel",
        )
    lag = delay_steps(coeffs.tau, sim.dt)
    report.append(Check("tau_over_dt", True, str(lag)))
    bound = GalerkinSystem(sim.n, coeffs).stability_bound()
    report.append(Check("rk4_stability", sim.dt <= bound, f"dt={sim.dt!r}, bound={bound!r}"))
    initial = build_initial(raw["initial"], sim.n, sim.seed, base_dir)
    report.append(Check("initial", True, raw["initial"]["preset"]))
    for c in report:
        log.info("validation %-14s %s %s", c.name, "ok" if c.ok else "FAIL", c.detail)
    return LoadedConfig(raw, coeffs, kernel, sim, initial, raw["experiment"], report, base_dir)


def load_config(path: str | os.PathLike) -> LoadedConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file {str(path)!r} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    return load_config_dict(doc, path.parent)


# -- output helpers ---------------------------------------------------------------------------


def _clean(v: Any) -> Any:
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats mapped to ``None``."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns: list[str], rows, digest: str) -> None:
    """CSV with a ``# digest`` comment line; floats in shortest round-trip form."""
    buf = io.StringIO()
    buf.write(f"# config_sha256={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def read_trace_csv(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None:
        raise ConfigurationError(f"{str(path)!r} is empty")
    data = [[float(x) for x in row] for row in reader if row]
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


# -- experiments ------------------------------------------------------------------------------


@dataclass
class SimulationResult:
    trace: RunTrace
    columns: dict[str, np.ndarray]
    summary: dict


def _constants(cfg: LoadedConfig) -> tuple[LyapunovConstants | None, str | None]:
    ly = cfg.experiment["lyapunov"]
    if not ly["enabled"]:
        return None, "disabled"
    if not cfg.coeffs.theorem_mode:
        return None, "exploratory coefficients"
    try:
        return select_constants(cfg.coeffs, cfg.kernel, t0=ly["t0"]), None
    except (SelectionFailureError, TimoDecayError) as exc:
        log.warning("constant selection failed: %s", exc)
        return None, str(exc)


def simulate(cfg: LoadedConfig) -> SimulationResult:
    """One run with every functional column, the decay fit and the summary record."""
    constants, const_note = _constants(cfg)
    trace = run(cfg.sim, cfg.coeffs, cfg.kernel, cfg.initial)
    ft = evaluate_trace(trace, cfg.coeffs, cfg.kernel, constants)
    cols = ft.columns
    E = cols["E"]
    fit_spec = cfg.experiment["fit"]
    t0 = fit_spec["t0"] if fit_spec["t0"] is not None else FIT_BURN_IN * cfg.sim.t_end
    try:
        fit = fit_decay(cols["t"], E, cfg.kernel if fit_spec["weighted"] else None, t0, fit_spec["t1"]).summary()
    except FitDomainError as exc:
        fit = {"error": str(exc)}
    try:
        equiv = equivalence_estimate(cols["L"], E) if constants is not None else None
    except UndefinedRatioError:
        equiv = None
    interior = slice(1, -1) if E.size > 2 else slice(None)
    summary = {
        "digest": cfg.digest,
        "version": code_version(),
        "lambda": cfg.coeffs.lam,
        "xi": cfg.coeffs.xi,
        "m0": m0(cfg.coeffs),
        "constants": constants.as_dict() if constants is not None else None,
        "constants_note": const_note,
        "fit": fit,
        "equivalence": equiv,
        "monotone_violations": monotone_violations(E),
        "coefficients": cfg.coeffs.as_dict(),
        "kernel": cfg.kernel.describe(),
        "sim": cfg.raw["sim"],
        "initial": cfg.raw["initial"],
        "diagnostics": {
            "rows": int(E.size),
            "E0": float(E[0]),
            "E_end": float(E[-1]),
            "max_balance_residual": float(np.nanmax(cols["balance_residual"][interior])) if E.size > 2 else None,
            "min_bound_slack": float(np.nanmin(cols["bound_slack"][interior])) if E.size > 2 else None,
            "error": trace.error,
            "last_finite_time": trace.last_finite_time,
        },
        "validation": cfg.report_dict(),
    }
    return SimulationResult(trace, cols, summary)


def _emit_simulation(res: SimulationResult, out: Path, digest: str) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    cols = res.columns
    rows = zip(*(cols[c] for c in CSV_COLUMNS))
    write_csv(out / "trace.csv", list(CSV_COLUMNS), rows, digest)
    write_json(out / "summary.json", res.summary)
    return ["trace.csv", "summary.json"]


def _refine_levels(cfg: LoadedConfig, axis: str, levels: int) -> list[dict]:
    out = []
    base = cfg.sim
    prev_E = None
    prev_diff = None
    for lvl in range(levels):
        raw = copy.deepcopy(cfg.raw)
        if axis == "dt":
            raw["sim"]["dt"] = base.dt / 2**lvl
            raw["sim"]["record_stride"] = base.record_stride * 2**lvl
        else:
            raw["sim"]["n"] = base.n * 2**lvl
        raw["experiment"]["lyapunov"]["enabled"] = False
        row: dict = {"axis": axis, "level": lvl, "n": raw["sim"]["n"], "dt": raw["sim"]["dt"]}
        try:
            res = simulate(load_config_dict(raw, cfg.base_dir))
        except TimoDecayError as exc:
            row.update(status="failed", error=str(exc))
            out.append(row)
            prev_E = prev_diff = None
            continue
        E = res.columns["E"]
        row.update(
            status="ok" if res.trace.error is None else "diverged",
            omega=res.summary["fit"].get("omega"),
            r2=res.summary["fit"].get("r2"),
            E_end=float(E[-1]),
            max_balance_residual=res.summary["diagnostics"]["max_balance_residual"],
        )
        if prev_E is not None and prev_E.size == E.size:
            diff = float(np.max(np.abs(E - prev_E)))
            row["diff_prev"] = diff
            if prev_diff is not None and diff > 0:
                row["ratio"] = prev_diff / diff
                row["order"] = math.log2(prev_diff / diff)
            prev_diff = diff
        prev_E = E
        out.append(row)
    return out


REFINE_COLUMNS = (
    "axis", "level", "n", "dt", "status", "omega", "r2", "E_end",
    "max_balance_residual", "diff_prev", "ratio", "order", "error",
)


def refine(cfg: LoadedConfig, levels: int | None = None) -> list[dict]:
    """dt-halving and n-doubling ladders; ``E`` is compared on the shared time grid."""
    spec = cfg.experiment["refine"]
    levels = levels or spec["levels"]
    rows: list[dict] = []
    for axis in spec["axes"]:
        rows.extend(_refine_levels(cfg, axis, levels))
    return rows


SWEEP_COLUMNS = (
    "cell", "param", "value", "status", "omega", "r2", "monotone_violations",
    "m_hat", "M_hat", "E0", "E_end", "digest", "error",
)


def _set_param(raw: dict, param: str, value: float) -> None:
    if "." in param:
        block, key = param.split(".", 1)
        target = raw.setdefault(block, {})
    else:
        block, key = next((b for b in ("theorem_inputs", "coefficients") if b in raw), None), param
        if block is None:
            raise ConfigurationError(f"sweep parameter {param!r} has no home block", "$.experiment.sweep.param")
        target = raw[block]
    if isinstance(target.get(key), int) and not isinstance(target.get(key), bool) and float(value).is_integer():
        value = int(value)
    target[key] = value


def _sweep_cell(cfg: LoadedConfig, out: Path | None, i: int, param: str, value: float) -> dict:
    raw = copy.deepcopy(cfg.raw)
    raw["experiment"]["kind"] = "simulate"
    raw["experiment"].pop("sweep", None)
    row: dict = {"cell": i, "param": param, "value": value}
    try:
        _set_param(raw, param, value)
        sub = load_config_dict(raw, cfg.base_dir)
        row["digest"] = sub.digest
        res = simulate(sub)
        if out is not None:
            _emit_simulation(res, out / f"cell-{i:03d}", sub.digest)
        s = res.summary
        eq = s["equivalence"] or {}
        row.update(
            status="ok" if res.trace.error is None else "diverged",
            omega=s["fit"].get("omega"),
            r2=s["fit"].get("r2"),
            monotone_violations=s["monotone_violations"],
            m_hat=eq.get("m_hat"),
            M_hat=eq.get("M_hat"),
            E0=s["diagnostics"]["E0"],
            E_end=s["diagnostics"]["E_end"],
            error=res.trace.error,
        )
    except TimoDecayError as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def sweep(cfg: LoadedConfig, param: str | None = None, values=None, out: Path | None = None) -> list[dict]:
    """One simulate cell per value; a failing cell is reported, the others still run."""
    spec = cfg.experiment.get("sweep") or {}
    param = param or spec.get("param")
    values = list(values if values is not None else spec.get("values", []))
    if not param or not values:
        raise ConfigurationError("sweep needs a parameter and at least one value", "$.experiment.sweep")
    jobs = [(i, float(v)) for i, v in enumerate(values)]
    workers = min(thread_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda j: _sweep_cell(cfg, out, j[0], param, j[1]), jobs))
    else:
        rows = [_sweep_cell(cfg, out, i, param, v) for i, v in jobs]
    return sorted(rows, key=lambda r: r["cell"])


VERIFY_COLUMNS = (
    "trial", "family", "g0", "rate", "cs_min_slack", "product_identity_residual_dt",
    "product_identity_residual_half", "identity_order", "pass",
)
CS_SLACK_TOL = -1e-9
ORDER_MIN = 1.9


def verify_kernels(seed: int = 42, trials: int = 100, kernel: RelaxationKernel | None = None) -> list[dict]:
    """Memory-operator identities on seeded random smooth histories.

    Each trial draws a kernel (unless one is given) and a trigonometric history,
    checks the Cauchy-Schwarz type slack on a grid and the order of the
    product-identity residual under step halving.
    """
    rng = np.random.default_rng(seed)
    rows = []
    horizon = 1.0
    for trial in range(trials):
        if kernel is not None:
            k = kernel
        elif trial % 2 == 0:
            k = exponential_kernel(rng.uniform(0.5, 2.0), rng.uniform(0.5, 3.0))
        else:
            k = power_kernel(rng.uniform(0.5, 2.0), rng.uniform(1.5, 4.0))
        amp = rng.standard_normal(4)
        freq = rng.uniform(0.5, 6.0, 4)
        phase = rng.uniform(0.0, 2 * math.pi, 4)
        offset = rng.standard_normal()

        def h(t, amp=amp, freq=freq, phase=phase, offset=offset):
            t = np.atleast_1d(t)
            return offset + (amp[:, None] * np.sin(freq[:, None] * t[None, :] + phase[:, None])).sum(0)

        res = []
        slack = math.inf
        for dt in (0.02, 0.01):
            hist = ScalarHistory.from_function(h, dt, horizon + dt)
            res.append(product_identity_residual(k, hist, horizon))
            m = int(round(horizon / dt))
            slack = min(slack, min(cauchy_schwarz_slack(k, hist, dt * i) for i in range(1, m + 1)))
        order = math.log2(res[0] / res[1]) if res[1] > 0 else math.inf
        rows.append(
            {
                "trial": trial,
                "family": k.family,
                "g0": k.g0,
                "rate": k.rate,
                "cs_min_slack": slack,
                "product_identity_residual_dt": res[0],
                "product_identity_residual_half": res[1],
                "identity_order": order,
                "pass": bool(slack >= CS_SLACK_TOL and order >= ORDER_MIN),
            }
        )
    return rows


def _row_values(rows: list[dict], columns) -> list[list]:
    return [["" if r.get(c) is None else r.get(c) for c in columns] for r in rows]


def run_experiment(cfg: LoadedConfig, out_dir: str | os.PathLike, **overrides) -> RunManifest:
    """Execute the configured experiment and write its outputs; the manifest is written last.

    ``overrides`` may set ``kind``, ``levels``, ``param``, ``values``, ``seed`` or ``trials``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = overrides.get("kind") or cfg.experiment["kind"]
    digest = cfg.digest
    manifest = RunManifest(digest, kind, cfg.coeffs.as_dict(), cfg.kernel.describe(), code_version())
    if kind == "simulate":
        res = simulate(cfg)
        manifest.outputs = _emit_simulation(res, out, digest)
    elif kind == "refine":
        rows = refine(cfg, overrides.get("levels"))
        write_csv(out / "refine.csv", list(REFINE_COLUMNS), _row_values(rows, REFINE_COLUMNS), digest)
        write_json(out / "refine.json", {"digest": digest, "levels": rows})
        manifest.outputs = ["refine.csv", "refine.json"]
    elif kind == "sweep":
        rows = sweep(cfg, overrides.get("param"), overrides.get("values"), out)
        write_csv(out / "sweep.csv", list(SWEEP_COLUMNS), _row_values(rows, SWEEP_COLUMNS), digest)
        write_json(out / "sweep.json", {"digest": digest, "cells": rows})
        manifest.outputs = ["sweep.csv", "sweep.json"] + [
            f"cell-{r['cell']:03d}/{name}" for r in rows if r["status"] != "failed" for name in ("trace.csv", "summary.json")
        ]
    elif kind == "verify-kernels":
        v = cfg.experiment["verify"]
        rows = verify_kernels(overrides.get("seed", v["seed"]), overrides.get("trials", v["trials"]), cfg.kernel)
        manifest.outputs = _emit_verify(rows, out, digest)
    else:
        raise ConfigurationError(f"unknown experiment kind {kind!r}", "$.experiment.kind")
    write_json(out / "manifest.json", manifest.as_dict())
    return manifest


def _emit_verify(rows: list[dict], out: Path, digest: str) -> list[str]:
    write_csv(out / "verify.csv", list(VERIFY_COLUMNS), _row_values(rows, VERIFY_COLUMNS), digest)
    passed = sum(r["pass"] for r in rows)
    write_json(out / "verify.json", {"digest": digest, "passed": passed, "trials": len(rows)})
    return ["verify.csv", "verify.json"]


def run_verify(seed: int, trials: int, out_dir: str | os.PathLike | None = None) -> tuple[list[dict], RunManifest | None]:
    """Stand-alone kernel suite (no config); the digest covers ``seed`` and ``trials``."""
    rows = verify_kernels(seed, trials)
    if out_dir is None:
        return rows, None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest({"verify": {"seed": seed, "trials": trials}})
    manifest = RunManifest(digest, "verify-kernels", {}, {}, code_version(), _emit_verify(rows, out, digest))
    write_json(out / "manifest.json", manifest.as_dict())
    return rows, manifest
