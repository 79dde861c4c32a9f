"""Config-driven runs behind the command line tool.

A run is described by one YAML file whose ``mode`` key selects the command.
Every command returns a :class:`ResultTable`; side tables (per-point photon
distributions and the like) hang off ``ResultTable.extra`` and are written
next to the main table by :func:`write_outputs`.

Config schema (all modes)::

    mode: table1 | fig3 | steady | evolve | rvdp
    output:            # optional
      basename: <str>  # main table file name without extension, default = mode
      format: csv | json

Mode-specific blocks are documented on each ``cmd_*`` function and in the
bundled examples under ``numbersqueeze/data``.
"""
from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import __version__, fock
from .errors import ConfigError, ConvergenceError, NumberSqueezeError
from .lindblad import (
    assemble_liouvillian,
    build_single_mode_model,
    evolve,
    observables,
    solve_optomech_steady,
    steady_state,
)
from .populations import (
    ReducedState,
    check_boundary,
    choose_truncation,
    conditional_slope,
    detailed_balance_residual,
    evolve_populations,
    evolve_reduced_coupled,
    g2_from_populations,
    moments,
    rvdp_trajectory,
    steady_populations_by_ratio,
    steady_reduced_coupled,
)
from .rates import (
    NM,
    DissipativeCouplingProfile,
    LogisticPairParams,
    OptomechParams,
    adiabatic_kappa_n,
    derived_scales,
    fluct_estimate,
    hz_to_rad,
    mean_estimate,
    self_consistent_fluct,
    squeezing_db,
)

MODES = ("table1", "fig3", "steady", "evolve", "rvdp")
FORMATS = ("csv", "json")
WORKERS_ENV = "NUMBERSQUEEZE_WORKERS"
DATA_DIR = Path(__file__).resolve().parent / "data"

RATE = "rate"  # unit label for rates of the abstract and zpf-unit models
TIME = "1/rate"


# --- config ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    mode: str
    raw: dict
    config_hash: str
    source: Optional[str] = None

    def block(self, name: str, required: bool = True) -> dict:
        val = self.raw.get(name)
        if val is None:
            if required:
                raise ConfigError(f"{self.mode} config: missing block '{name}'")
            return {}
        if not isinstance(val, dict):
            raise ConfigError(f"{self.mode} config: '{name}' must be a mapping")
        return val

    @property
    def output(self) -> dict:
        return self.block("output", required=False)


def config_hash(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def parse_config(raw: Any, source: Optional[str] = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError(f"config 'mode' must be one of {', '.join(MODES)}; got {mode!r}")
    out = raw.get("output") or {}
    if not isinstance(out, dict):
        raise ConfigError("'output' must be a mapping")
    if "format" in out and out["format"] not in FORMATS:
        raise ConfigError(f"output.format must be csv or json; got {out['format']!r}")
    cfg = RunConfig(mode=mode, raw=raw, config_hash=config_hash(raw), source=source)
    _VALIDATORS[mode](cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return parse_config(raw, source=str(path))


def bundled_config(name: str) -> Path:
    """Path of a bundled example config, e.g. ``bundled_config("table1")``."""
    path = DATA_DIR / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


def _num(block: dict, key: str, where: str, default=None, positive=False, nonneg=False) -> float:
    if key not in block or block[key] is None:
        if default is None:
            raise ConfigError(f"{where}: missing parameter '{key}'")
        return default
    val = block[key]
    if isinstance(val, bool):
        raise ConfigError(f"{where}: '{key}' must be a number")
    try:
        # YAML 1.1 reads '1e-2' as a string; accept it
        val = float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: '{key}' must be a number, got {block[key]!r}") from None
    if not math.isfinite(val):
        raise ConfigError(f"{where}: '{key}' must be finite")
    if positive and not val > 0:
        raise ConfigError(f"{where}: '{key}' must be positive")
    if nonneg and val < 0:
        raise ConfigError(f"{where}: '{key}' must be non-negative")
    return val


def _int(block: dict, key: str, where: str, default=None, minimum: int = 0) -> int:
    val = _num(block, key, where, default=None if default is None else float(default))
    if val != int(val) or val < minimum:
        raise ConfigError(f"{where}: '{key}' must be an integer >= {minimum}")
    return int(val)


def _choice(block: dict, key: str, where: str, options, default=None):
    val = block.get(key, default)
    if val not in options:
        raise ConfigError(f"{where}: '{key}' must be one of {list(options)}; got {val!r}")
    return val


def sweep_grid(spec: dict, where: str = "sweep") -> np.ndarray:
    """Grid from ``values: [...]`` or ``start/stop/num/scale``; must be non-empty and monotone."""
    if "values" in spec:
        vals = spec["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"{where}: 'values' must be a non-empty list")
        grid = np.array([_num({"v": v}, "v", where) for v in vals])
    else:
        start = _num(spec, "start", where)
        stop = _num(spec, "stop", where)
        num = _int(spec, "num", where, minimum=1)
        scale = _choice(spec, "scale", where, ("log", "linear"), default="log")
        if scale == "log":
            if start <= 0 or stop <= 0:
                raise ConfigError(f"{where}: log grid needs positive start and stop")
            grid = np.logspace(math.log10(start), math.log10(stop), num)
        else:
            grid = np.linspace(start, stop, num)
    if grid.size > 1:
        d = np.diff(grid)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigError(f"{where}: grid must be strictly monotone")
    return grid


# --- result tables ----------------------------------------------------------------------


@dataclass(frozen=True)
class Column:
    name: str
    unit: str

    @property
    def header(self) -> str:
        return f"{self.name}({self.unit})"


@dataclass
class ResultTable:
    columns: list
    rows: list
    metadata: dict = field(default_factory=dict)
    name: str = "result"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = [c if isinstance(c, Column) else Column(*c) for c in self.columns]
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} entries, expected {width}")
        self.rows = [tuple(r) for r in self.rows]

    def column(self, name: str) -> np.ndarray:
        idx = [c.name for c in self.columns].index(name)
        return np.array([r[idx] for r in self.rows])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def render_csv(table: ResultTable) -> str:
    """CSV text: ``# key: value`` metadata lines, a ``name(unit)`` header, then rows."""
    lines = [f"# {k}: {json.dumps(table.metadata[k], sort_keys=True)}" for k in sorted(table.metadata)]
    lines.append(",".join(c.header for c in table.columns))
    for row in table.rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def render_json(table: ResultTable) -> str:
    doc = {
        "metadata": table.metadata,
        "columns": [{"name": c.name, "unit": c.unit} for c in table.columns],
        "rows": [[_json_value(v) for v in row] for row in table.rows],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def read_json_table(path) -> ResultTable:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    special = {"nan": math.nan, "inf": math.inf, "-inf": -math.inf}
    rows = [[special.get(v, v) if isinstance(v, str) else v for v in row] for row in doc["rows"]]
    cols = [Column(c["name"], c["unit"]) for c in doc["columns"]]
    return ResultTable(cols, rows, doc["metadata"])


def read_csv_table(path) -> ResultTable:
    meta = {}
    rows = []
    header = None
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh.read().split("\n"):
            if not line:
                continue
            if line.startswith("# "):
                key, _, val = line[2:].partition(": ")
                meta[key] = json.loads(val)
            elif header is None:
                header = line.split(",")
            else:
                rows.append([_parse_cell(c) for c in line.split(",")])
    cols = [Column(h[: h.index("(")], h[h.index("(") + 1 : -1]) for h in header]
    return ResultTable(cols, rows, meta)


def _parse_cell(c: str):
    try:
        return int(c)
    except ValueError:
        pass
    try:
        return float(c)
    except ValueError:
        return c


def write_outputs(table: ResultTable, out_dir, fmt: str = "csv", basename: Optional[str] = None) -> list:
    """Write the main table and its side tables into ``out_dir``.

    Side tables named ``pn_<i>`` are always CSV. Files are written through a
    temporary name and renamed; if any write fails, every file of this call
    is removed before the error propagates.
    """
    if fmt not in FORMATS:
        raise ConfigError(f"unknown output format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(f"{basename or table.name}.{fmt}", render_csv(table) if fmt == "csv" else render_json(table))]
    for key in sorted(table.extra, key=_natural_key):
        side = table.extra[key]
        side_fmt = "csv" if key.startswith("pn_") else fmt
        jobs.append((f"{key}.{side_fmt}", render_csv(side) if side_fmt == "csv" else render_json(side)))
    written = []
    try:
        for fname, text in jobs:
            target = out_dir / fname
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{fname}.", suffix=".part")
            try:
                with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
            written.append(target)
    except BaseException:
        for path in written:
            try:
                path.unlink()
            except OSError:
                pass
        raise
    return written


def _natural_key(s: str):
    head, _, tail = s.rpartition("_")
    return (head, int(tail)) if tail.isdigit() else (s, -1)


def _metadata(cfg: RunConfig, assumptions: dict, **extra) -> dict:
    meta = {
        "tool": "numbersqueeze",
        "version": __version__,
        "mode": cfg.mode,
        "config_hash": cfg.config_hash,
        "assumptions": assumptions,
    }
    meta.update(extra)
    return meta


def _pn_table(P, meta: dict, name: str) -> ResultTable:
    P = np.asarray(P, dtype=float)
    rows = [(n, float(P[n])) for n in range(P.size)]
    return ResultTable([Column("n", "-"), Column("P_n", "-")], rows, dict(meta, table=name), name=name)


# --- table1 -----------------------------------------------------------------------------

TABLE1_KEYS = ("m_eff_kg", "f_m_hz", "g0_hz", "d_nm", "L_nm")


def _validate_table1(cfg: RunConfig):
    systems = cfg.raw.get("systems")
    if not isinstance(systems, list) or not systems:
        raise ConfigError("table1 config: 'systems' must be a non-empty list")
    solver = cfg.block("solver", required=False)
    if solver.get("use_blur", False) and "n_th" not in solver:
        raise ConfigError("table1 config: use_blur needs solver.n_th")
    for i, sysblock in enumerate(systems):
        if not isinstance(sysblock, dict):
            raise ConfigError(f"table1 config: systems[{i}] must be a mapping")
        where = f"system '{sysblock.get('name', i)}'"
        for key in TABLE1_KEYS:
            _num(sysblock, key, where, positive=True)


def table1_params(sysblock: dict, n_th: float = 0.0) -> OptomechParams:
    """SI parameter record for one Table I style row (Hz and nm inputs).

    Rates that do not enter the ideal estimates are set to 1.
    """
    where = f"system '{sysblock.get('name', '?')}'"
    v = {k: _num(sysblock, k, where, positive=True) for k in TABLE1_KEYS}
    return OptomechParams(
        m_eff=v["m_eff_kg"],
        omega_m=hz_to_rad(v["f_m_hz"]),
        g0=hz_to_rad(v["g0_hz"]),
        gamma=1.0,
        n_th=n_th,
        kappa_minus=1.0,
        profile=DissipativeCouplingProfile(kappa_v=0.0, kappa0=1.0, L=v["L_nm"] * NM, d=v["d_nm"] * NM),
    )


def cmd_table1(cfg: RunConfig) -> ResultTable:
    """Ideal-adiabatic number statistics for a list of optomechanical systems.

    Config::

        mode: table1
        systems:
          - {name: micromirror, m_eff_kg: 1.1e-10, f_m_hz: 9.7e3, g0_hz: 22, d_nm: 2.48, L_nm: 50}
        solver: {use_blur: false}        # true needs n_th

    ``f_m_hz`` and ``g0_hz`` are ordinary frequencies (angular / 2 pi).
    """
    solver = cfg.block("solver", required=False)
    use_blur = bool(solver.get("use_blur", False))
    n_th = _num(solver, "n_th", "solver", default=0.0, nonneg=True) if use_blur else 0.0
    rows = []
    for sysblock in cfg.raw["systems"]:
        p = table1_params(sysblock, n_th)
        sc = derived_scales(p)
        n_bar = mean_estimate(p)
        dn = fluct_estimate(p, use_blur=use_blur)
        rows.append((str(sysblock.get("name", "")), sc.x1 / NM, dn, n_bar, float(squeezing_db(n_bar, dn))))
    assumptions = {"d_prime_equals_d": not use_blur, "n_th": n_th if use_blur else None}
    cols = [
        Column("system", "-"),
        Column("x1", "nm"),
        Column("delta_n", "-"),
        Column("n_bar", "-"),
        Column("squeezing", "dB"),
    ]
    return ResultTable(cols, rows, _metadata(cfg, assumptions), name="table1")


# --- fig3 -------------------------------------------------------------------------------

ZPF_KEYS = ("g0", "kappa0", "kappa_minus", "kappa_v", "d", "L")
SWEEPABLE = ("gamma_over_kappa_minus",) + ZPF_KEYS + ("n_th",)


def zpf_params(block: dict, where: str, gamma: Optional[float] = None) -> OptomechParams:
    """Parameters in ``omega_m = 1``, ``x_zpf = 1`` units.

    ``gamma`` comes from ``gamma_over_kappa_minus`` (or ``gamma``) unless given.
    """
    v = {k: _num(block, k, where, nonneg=(k == "kappa_v"), positive=(k != "kappa_v")) for k in ZPF_KEYS}
    n_th = _num(block, "n_th", where, default=0.0, nonneg=True)
    if gamma is None:
        if "gamma" in block:
            gamma = _num(block, "gamma", where, positive=True)
        else:
            gamma = _num(block, "gamma_over_kappa_minus", where, positive=True) * v["kappa_minus"]
    omega_a = _num(block, "omega_a", where, default=0.0)
    return OptomechParams.in_zpf_units(gamma=gamma, n_th=n_th, omega_a=omega_a or None, **v)


def _validate_fig3(cfg: RunConfig):
    params = cfg.block("params")
    sweep = cfg.block("sweep")
    name = sweep.get("parameter", "gamma_over_kappa_minus")
    if name not in SWEEPABLE:
        raise ConfigError(f"sweep.parameter must be one of {list(SWEEPABLE)}; got {name!r}")
    grid = sweep_grid(sweep)
    probe = dict(params)
    probe[name] = float(grid[0])
    zpf_params(probe, "fig3 params")
    solver = cfg.block("solver", required=False)
    if "N" in solver:
        _int(solver, "N", "solver", minimum=4)
    toy = solver.get("toy")
    if toy is not None:
        if not isinstance(toy, dict):
            raise ConfigError("solver.toy must be a mapping")
        zpf_params(dict(toy, gamma_over_kappa_minus=1.0), "solver.toy")
        for key in ("N_photon", "N_phonon"):
            _int(toy, key, "solver.toy", minimum=2)
        _num(toy, "frame_shift", "solver.toy")


def _fig3_point(job):
    """One sweep point; returns a dict and never raises solver errors."""
    index, params_block, solver, sweep_name, value = job
    block = dict(params_block)
    block[sweep_name] = value
    p = zpf_params(block, "fig3 params")
    r = p.gamma / p.kappa_minus
    sc = derived_scales(p)
    use_blur = bool(solver.get("use_blur", True))
    out = {"index": index, "value": value, "ratio": r, "status": "ok", "P": None}
    nan = float("nan")
    out.update(n_bar_analytic=nan, delta_n_analytic=nan, xi=nan, n_bar_reduced=nan, delta_n_reduced=nan,
               top3_mass=nan, slope=nan, delta_n_evolve=nan, n_bar_toy=nan, delta_n_toy=nan, N=0)
    errors = []
    try:
        fp = self_consistent_fluct(p, use_blur=use_blur)
        out.update(n_bar_analytic=mean_estimate(p), delta_n_analytic=fp.delta_n, xi=fp.xi)
    except (ConvergenceError, ValueError) as exc:
        errors.append(f"analytic:{type(exc).__name__}")
    try:
        n_est = mean_estimate(p)
        dn_est = out["delta_n_analytic"] if math.isfinite(out["delta_n_analytic"]) else 1.0
        N = int(solver.get("N") or choose_truncation(n_est, max(dn_est, 1.0), sigmas=12.0))
        for _ in range(4):
            state = steady_reduced_coupled(p, N)
            if check_boundary(state.probs):
                break
            N = int(math.ceil(1.5 * N))
        else:
            raise ConvergenceError(f"reduced model: top-level mass {state.probs[-1]:.3g} at N={N}")
        m, v = moments(state.probs)
        P = state.probs
        top3 = float(np.max(P[:-2] + P[1:-1] + P[2:])) if P.size >= 3 else float(P.sum())
        out.update(n_bar_reduced=m, delta_n_reduced=math.sqrt(v), top3_mass=top3, P=P.tolist(), N=N)
        try:
            out["slope"] = conditional_slope(state, sc.x1)
        except ValueError:
            pass
        if solver.get("evolve_crosscheck", False):
            t_final = _num(solver, "evolve_t_final", "solver", default=1e4 / p.gamma, positive=True)
            # detailed-balance start at the adiabatic displacements
            P0 = steady_populations_by_ratio(lambda n: adiabatic_kappa_n(n, p), _kminus(p), N)
            st, _ = evolve_reduced_coupled(ReducedState(P0, np.arange(N) * sc.x1), p, t_final)
            out["delta_n_evolve"] = math.sqrt(moments(st.probs)[1])
    except (ConvergenceError, ValueError) as exc:
        errors.append(f"reduced:{type(exc).__name__}")
    toy = solver.get("toy")
    if toy is not None:
        try:
            pt = zpf_params(dict(toy, gamma_over_kappa_minus=r), "solver.toy")
            rep, _, _ = solve_optomech_steady(
                pt, int(toy["N_photon"]), int(toy["N_phonon"]), float(toy["frame_shift"]), escalate=0
            )
            out.update(n_bar_toy=rep.n_bar, delta_n_toy=rep.delta_n)
        except NumberSqueezeError as exc:
            errors.append(f"toy:{type(exc).__name__}")
    if errors:
        out["status"] = ";".join(errors)
    return out


def _kminus(p):
    return lambda n: np.full(np.shape(n), p.kappa_minus)


def resolve_workers(cli_value: Optional[int] = None, cfg: Optional[RunConfig] = None) -> int:
    """Worker count: command line, then the environment override, then config, then 1."""
    if cli_value is not None:
        val, src = cli_value, "--workers"
    elif os.environ.get(WORKERS_ENV):
        val, src = os.environ[WORKERS_ENV], WORKERS_ENV
    elif cfg is not None and cfg.block("solver", required=False).get("workers") is not None:
        val, src = cfg.block("solver", required=False)["workers"], "solver.workers"
    else:
        return 1
    try:
        val = int(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{src} must be an integer, got {val!r}") from None
    if val < 1:
        raise ConfigError(f"{src} must be >= 1")
    return val


def cmd_fig3(cfg: RunConfig, workers: int = 1) -> ResultTable:
    """Sweep of photon-number fluctuations against mechanical damping.

    Config::

        mode: fig3
        params: {g0: 707, kappa0: 0.1, kappa_minus: 0.01, kappa_v: 0.001, d: 14, L: 7.0e+4}
        sweep: {parameter: gamma_over_kappa_minus, start: 1.0e-2, stop: 1.0e+2, num: 9, scale: log}
        solver:
          use_blur: true
          N: 120                    # optional; default from the analytic estimate
          evolve_crosscheck: false  # also time-integrate the reduced model
          toy: {...}                # optional small full-model run per point

    Units: ``omega_m = 1`` and lengths in ``x_zpf``. ``n_th`` defaults to 0
    and is then flagged as assumed. Each point gets a ``pn_<index>`` table of
    the reduced-model photon distribution. Points that fail keep NaN values
    and a non-``ok`` status; the sweep continues.
    """
    params = cfg.block("params")
    sweep = cfg.block("sweep")
    solver = cfg.block("solver", required=False)
    name = sweep.get("parameter", "gamma_over_kappa_minus")
    grid = sweep_grid(sweep)
    jobs = [(i, params, solver, name, float(v)) for i, v in enumerate(grid)]
    if workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fig3_point, jobs))
    else:
        results = [_fig3_point(j) for j in jobs]
    results.sort(key=lambda d: d["index"])

    assumptions = {
        "n_th": _num(params, "n_th", "params", default=0.0),
        "n_th_assumed": "n_th" not in params,
        "use_blur": bool(solver.get("use_blur", True)),
        "reduced_solver": "newton_steady_state",
        "xi_mean_photon_number": "L/x1 - 1/2",
    }
    failed = sum(r["status"] != "ok" for r in results)
    meta = _metadata(cfg, assumptions, failed_points=failed)
    cols = [Column("index", "-"), Column(name, "-")]
    keys = ["index", "value"]
    if name != "gamma_over_kappa_minus":
        cols.append(Column("gamma_over_kappa_minus", "-"))
        keys.append("ratio")
    more = [
        ("n_bar_analytic", "-"),
        ("delta_n_analytic", "-"),
        ("xi", "-"),
        ("n_bar_reduced", "-"),
        ("delta_n_reduced", "-"),
        ("top3_mass", "-"),
        ("slope", "x1"),
        ("N", "-"),
    ]
    if solver.get("evolve_crosscheck", False):
        more.append(("delta_n_evolve", "-"))
    if solver.get("toy") is not None:
        more += [("n_bar_toy", "-"), ("delta_n_toy", "-")]
    more.append(("status", "-"))
    cols += [Column(k, u) for k, u in more]
    keys += [k for k, _ in more]
    rows = [tuple(r[k] for k in keys) for r in results]
    table = ResultTable(cols, rows, meta, name="fig3")
    for r in results:
        if r["P"] is not None:
            key = f"pn_{r['index']}"
            table.extra[key] = _pn_table(r["P"], meta, key)
    return table


# --- steady / evolve ---------------------------------------------------------------------

MODEL_TYPES = ("logistic", "constant", "optomech")


def _validate_model(cfg: RunConfig):
    model = cfg.block("model")
    kind = _choice(model, "type", "model", MODEL_TYPES)
    solver = cfg.block("solver", required=False)
    engine = _choice(solver, "engine", "solver", ("lindblad", "populations"), default="lindblad")
    if kind == "logistic":
        LogisticPairParams(
            kappa0=_num(model, "kappa0", "model", positive=True),
            k=_num(model, "k", "model", positive=True),
            n0=_num(model, "n0", "model"),
        )
    elif kind == "constant":
        _num(model, "kplus", "model", nonneg=True)
        _num(model, "kminus", "model", nonneg=True)
    else:
        if engine != "lindblad":
            raise ConfigError("optomech models need solver.engine: lindblad")
        zpf_params(model, "model")
        _int(solver, "N_phonon", "solver", minimum=2)
        _num(solver, "frame_shift", "solver", default=0.0)
    _int(solver, "N", "solver", default=40, minimum=2)


def _rate_fns(model: dict):
    kind = model["type"]
    if kind == "logistic":
        lp = LogisticPairParams(kappa0=float(model["kappa0"]), k=float(model["k"]), n0=float(model["n0"]))
        return lp.kplus, lp.kminus
    kp = _num(model, "kplus", "model", nonneg=True)
    km = _num(model, "kminus", "model", nonneg=True)
    return (lambda n: np.full(np.shape(n), kp)), (lambda n: np.full(np.shape(n), km))


REPORT_COLUMNS = [
    Column("n_bar", "-"),
    Column("delta_n", "-"),
    Column("variance", "-"),
    Column("g2", "-"),
    Column("squeezing", "dB"),
    Column("residual", RATE),
    Column("min_eigenvalue", "-"),
    Column("N", "-"),
]


def cmd_steady(cfg: RunConfig) -> ResultTable:
    """Steady state of a single-mode or optomechanical model.

    Config::

        mode: steady
        model: {type: logistic, kappa0: 1.0, k: 0.2, n0: 20}
        #  or {type: constant, kplus: 1.0, kminus: 0.5}
        #  or {type: optomech, g0: ..., kappa0: ..., kappa_minus: ..., kappa_v: ..., d: ..., L: ...,
        #      gamma_over_kappa_minus: ..., n_th: 0}
        solver: {engine: lindblad, N: 80, omega_a: 0.0, method: auto}
        #  optomech also needs N_phonon and frame_shift (x_zpf units)
    """
    model = cfg.block("model")
    solver = cfg.block("solver", required=False)
    engine = solver.get("engine", "lindblad")
    N = _int(solver, "N", "solver", default=40, minimum=2)
    assumptions = {"engine": engine, "model": model["type"]}
    meta = _metadata(cfg, assumptions)
    extra = {}
    if model["type"] == "optomech":
        p = zpf_params(model, "model")
        rep, rho, _ = solve_optomech_steady(
            p,
            N,
            _int(solver, "N_phonon", "solver", minimum=2),
            _num(solver, "frame_shift", "solver", default=0.0),
            escalate=_int(solver, "escalate", "solver", default=4),
            method=solver.get("method", "auto"),
        )
        N_used = rho.dims[0]
        cond = [
            (n, float(rep.populations[n]), float(rep.conditional_x[n]), float(rep.extracted_kappa_n[n]))
            for n in range(N_used)
        ]
        extra["conditional_0"] = ResultTable(
            [Column("n", "-"), Column("P_n", "-"), Column("x_n", "x_zpf"), Column("kappa_n", RATE)],
            cond,
            dict(meta, table="conditional_0"),
            name="conditional_0",
        )
        P = rep.populations
        row = (rep.n_bar, rep.delta_n, rep.delta_n**2, rep.g2, rep.squeezing_db, rep.residual,
               rep.min_eigenvalue, N_used)
    elif engine == "populations":
        kplus, kminus = _rate_fns(model)
        P = steady_populations_by_ratio(kplus, kminus, N)
        m, v = moments(P)
        res = detailed_balance_residual(P, kplus, kminus)
        row = (m, math.sqrt(v), v, g2_from_populations(P), float(squeezing_db(m, math.sqrt(v))), res,
               float(P.min()), N)
    else:
        kplus, kminus = _rate_fns(model)
        m_ = build_single_mode_model(kplus, kminus, _num(solver, "omega_a", "solver", default=0.0), N)
        L = assemble_liouvillian(m_)
        rho = steady_state(L, method=solver.get("method", "auto"))
        rep = observables(rho, m_, L)
        P = rep.populations
        row = (rep.n_bar, rep.delta_n, rep.delta_n**2, rep.g2, rep.squeezing_db, rep.residual,
               rep.min_eigenvalue, N)
    extra["pn_0"] = _pn_table(np.clip(P, 0.0, None), meta, "pn_0")
    return ResultTable(REPORT_COLUMNS, [row], meta, name="steady", extra=extra)


INITIAL_TYPES = ("fock", "thermal", "poisson", "coherent", "populations")


def _validate_evolve(cfg: RunConfig):
    _validate_model(cfg)
    if cfg.block("model")["type"] == "optomech":
        raise ConfigError("evolve supports single-mode models only")
    init = cfg.block("initial")
    kind = _choice(init, "type", "initial", INITIAL_TYPES)
    solver = cfg.block("solver", required=False)
    if kind == "coherent" and solver.get("engine", "lindblad") != "lindblad":
        raise ConfigError("coherent initial states need solver.engine: lindblad")
    times = cfg.block("times")
    _num(times, "t_final", "times", positive=True)
    _int(times, "num", "times", default=11, minimum=2)
    _initial_state(init, _int(solver, "N", "solver", default=40, minimum=2))


def _initial_state(init: dict, N: int) -> np.ndarray:
    """Initial density matrix (dense, N x N)."""
    kind = init["type"]
    if kind == "fock":
        n = _int(init, "n", "initial")
        if n >= N:
            raise ConfigError(f"initial: Fock level {n} outside truncation N={N}")
        return fock.fock_dm(N, n)
    if kind == "thermal":
        return fock.thermal_state(N, _num(init, "n_th", "initial", nonneg=True))
    if kind == "poisson":
        ket = fock.coherent_state(N, math.sqrt(_num(init, "mean", "initial", nonneg=True)))
        return np.diag(np.abs(ket) ** 2).astype(complex)
    if kind == "coherent":
        ket = fock.coherent_state(N, complex(_num(init, "alpha", "initial")))
        return np.outer(ket, ket.conj())
    vals = init.get("values")
    if not isinstance(vals, list) or len(vals) > N or not vals:
        raise ConfigError(f"initial: 'values' must be a non-empty list of at most N={N} numbers")
    P = np.zeros(N)
    P[: len(vals)] = [_num({"v": v}, "v", "initial.values", nonneg=True) for v in vals]
    if not P.sum() > 0:
        raise ConfigError("initial: populations sum to zero")
    return np.diag(P / P.sum()).astype(complex)


def cmd_evolve(cfg: RunConfig) -> ResultTable:
    """Time evolution of a single-mode model.

    Config::

        mode: evolve
        model: {type: logistic, kappa0: 1.0, k: 0.5, n0: 10}
        initial: {type: poisson, mean: 4}   # fock n | thermal n_th | coherent alpha | populations values
        times: {t_final: 50, num: 11}
        solver: {engine: lindblad, N: 40, tol: 1.0e-10}

    Rows are the photon statistics at ``num`` evenly spaced times; ``pn_0``
    holds the final distribution.
    """
    model = cfg.block("model")
    solver = cfg.block("solver", required=False)
    engine = solver.get("engine", "lindblad")
    N = _int(solver, "N", "solver", default=40, minimum=2)
    tol = _num(solver, "tol", "solver", default=1e-10, positive=True)
    times = cfg.block("times")
    ts = np.linspace(0.0, _num(times, "t_final", "times"), _int(times, "num", "times", default=11, minimum=2))
    rho0 = _initial_state(cfg.block("initial"), N)
    kplus, kminus = _rate_fns(model)
    meta = _metadata(cfg, {"engine": engine, "model": model["type"]})
    rows = []
    if engine == "populations":
        P0 = np.real(np.diag(rho0)).copy()
        sol = evolve_populations(P0, kplus, kminus, ts[-1], tol=0.0, rtol=tol, atol=tol * 1e-2, sample_times=ts)
        # the steady-state exit is disabled (tol=0), so every sample is filled
        for t, P in zip(ts, sol.ys):
            m, v = moments(P)
            rows.append((t, m, math.sqrt(max(v, 0.0)), _safe_g2(P), float(P.sum()), 0.0))
        P_final = sol.y
    else:
        model_ = build_single_mode_model(kplus, kminus, _num(solver, "omega_a", "solver", default=0.0), N)
        L = assemble_liouvillian(model_)
        _, sol = evolve(rho0, L, ts[-1], tol=tol, sample_times=ts)
        for t, vec in zip(ts, sol.ys):
            rho = fock.DensityMatrix.from_vector(vec, L.dims)
            P = rho.photon_populations()
            m, v = moments(P)
            rows.append((t, m, math.sqrt(max(v, 0.0)), _safe_g2(P), float(np.real(rho.trace)), rho.hermiticity_error()))
        P_final = fock.DensityMatrix.from_vector(sol.y, L.dims).photon_populations()
    cols = [
        Column("t", TIME),
        Column("n_bar", "-"),
        Column("delta_n", "-"),
        Column("g2", "-"),
        Column("trace", "-"),
        Column("hermiticity_error", "-"),
    ]
    table = ResultTable(cols, rows, meta, name="evolve")
    table.extra["pn_0"] = _pn_table(np.clip(P_final, 0.0, None), meta, "pn_0")
    return table


def _safe_g2(P) -> float:
    return g2_from_populations(P) if moments(P)[0] > 0 else float("nan")


# --- rvdp -------------------------------------------------------------------------------


def _validate_rvdp(cfg: RunConfig):
    params = cfg.block("params")
    _num(params, "mu", "params", positive=True)
    _num(params, "x0", "params")
    _num(params, "v0", "params")
    _num(params, "t_final", "params", positive=True)
    _int(params, "n_samples", "params", default=2001, minimum=2)


def cmd_rvdp(cfg: RunConfig) -> ResultTable:
    """Rayleigh-Van der Pol trajectory with its energy ``x'^2 + x^2``.

    Config::

        mode: rvdp
        params: {mu: 0.5, x0: 2.0, v0: 0.0, t_final: 60, n_samples: 601}
    """
    params = cfg.block("params")
    t, x, v = rvdp_trajectory(
        _num(params, "mu", "params"),
        _num(params, "x0", "params"),
        _num(params, "v0", "params"),
        _num(params, "t_final", "params"),
        n_samples=_int(params, "n_samples", "params", default=2001, minimum=2),
    )
    rows = list(zip(t.tolist(), x.tolist(), v.tolist(), (x * x + v * v).tolist()))
    cols = [Column("t", "1/omega"), Column("x", "-"), Column("v", "-"), Column("energy", "-")]
    return ResultTable(cols, rows, _metadata(cfg, {}), name="rvdp")


_VALIDATORS = {
    "table1": _validate_table1,
    "fig3": _validate_fig3,
    "steady": _validate_model,
    "evolve": _validate_evolve,
    "rvdp": _validate_rvdp,
}


def run(cfg: RunConfig, workers: int = 1) -> ResultTable:
    if cfg.mode == "table1":
        return cmd_table1(cfg)
    if cfg.mode == "fig3":
        return cmd_fig3(cfg, workers=workers)
    if cfg.mode == "steady":
        return cmd_steady(cfg)
    if cfg.mode == "evolve":
        return cmd_evolve(cfg)
    return cmd_rvdp(cfg)
