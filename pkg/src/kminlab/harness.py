"""Run configuration, cached ground state, sweeps and their on-disk artifacts.

Config files are a small block syntax::

    # comments run to end of line
    domain { shape="disk", center=[0, 0], radius=1, h=0.015625 }
    potential { wells=[{x=[0.3, 0], p=2}], h="const:1" }
    physics { beta_ratio=1 }
    sweep { b_grid="1e-2:1e-5:geometric:10" }
    seed = 0

Entries inside a block are separated by commas or newlines.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .asymptotics import RegimePrediction, fit_scaling, predict_for, trial_upper_bound
from .energy import gn_ratio
from .errors import ConfigError, KminlabError, WellOutsideClosure
from .fieldio import (
    ensure_dir,
    load_profile_npz,
    save_profile_npz,
    write_kfld,
    write_profile_csv,
)
from .geometry import build_grid, sample_potential
from .groundstate import RadialProfile, solve_ground_state
from .minimizer import (
    FlowConfig,
    MinimizeResult,
    auxiliary_minimum,
    continuation_sweep,
    gaussian_field,
    minimize,
)

# -- parsing ------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+) |
    (?P<comment>\#[^\n]*) |
    (?P<nl>\n) |
    (?P<string>"(?:[^"\\\n]|\\.)*") |
    (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?) |
    (?P<ident>[A-Za-z_][A-Za-z0-9_]*) |
    (?P<punct>[{}\[\],=])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    pos, line = 0, 1
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ConfigError(f"unexpected character {text[pos]!r}", line=line)
        kind = m.lastgroup
        val = m.group()
        if kind == "nl":
            out.append(("nl", val, line))
            line += 1
        elif kind not in ("ws", "comment"):
            out.append((kind, val, line))
        pos = m.end()
    out.append(("eof", "", line))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.lines = {}

    def peek(self, skip_nl=True):
        if skip_nl:
            while self.toks[self.i][0] == "nl":
                self.i += 1
        return self.toks[self.i]

    def take(self, kind=None, value=None, skip_nl=True):
        tok = self.peek(skip_nl)
        if (kind and tok[0] != kind) or (value and tok[1] != value):
            want = value or kind
            raise ConfigError(f"expected {want!r}, found {tok[1] or 'end of file'!r}", line=tok[2])
        self.i += 1
        return tok

    def document(self) -> dict:
        doc = {}
        while self.peek()[0] != "eof":
            name = self.take("ident")
            if name[1] in doc:
                raise ConfigError("duplicate entry", line=name[2], field=name[1])
            tok = self.peek()
            if tok[1] == "{":
                doc[name[1]] = self.table(prefix=name[1])
            else:
                self.take("punct", "=")
                doc[name[1]] = self.value(prefix=name[1])
            self.lines[name[1]] = name[2]
        return doc

    def table(self, prefix: str) -> dict:
        self.take("punct", "{")
        out = {}
        while True:
            tok = self.peek()
            if tok[1] == "}":
                self.i += 1
                return out
            key = self.take("ident")
            self.take("punct", "=")
            path = f"{prefix}.{key[1]}"
            if key[1] in out:
                raise ConfigError("duplicate key", line=key[2], field=path)
            out[key[1]] = self.value(prefix=path)
            self.lines[path] = key[2]
            tok = self.peek(skip_nl=False)
            if tok[1] == ",":
                self.i += 1
            elif tok[0] == "nl" or tok[1] == "}":
                continue
            else:
                raise ConfigError(f"expected ',' or '}}', found {tok[1]!r}", line=tok[2], field=path)

    def value(self, prefix: str):
        tok = self.peek()
        if tok[0] == "string":
            self.i += 1
            return json.loads(tok[1])
        if tok[0] == "number":
            self.i += 1
            txt = tok[1]
            return int(txt) if re.fullmatch(r"[-+]?\d+", txt) else float(txt)
        if tok[0] == "ident" and tok[1] in ("true", "false"):
            self.i += 1
            return tok[1] == "true"
        if tok[1] == "[":
            self.i += 1
            items = []
            while self.peek()[1] != "]":
                items.append(self.value(prefix))
                if self.peek()[1] == ",":
                    self.i += 1
            self.i += 1
            return items
        if tok[1] == "{":
            return self.table(prefix)
        raise ConfigError(f"unexpected {tok[1] or 'end of file'!r}", line=tok[2], field=prefix)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}={_fmt(x)}" for k, x in v.items()) + "}"
    raise TypeError(f"cannot serialize {type(v).__name__}")


# -- configuration ------------------------------------------------------------

_ALLOWED = {
    "domain": {"shape", "center", "radius", "bounds", "h", "mask_file", "origin", "assume_interior_ball"},
    "potential": {"wells", "h"},
    "physics": {"beta", "beta_ratio"},
    "sweep": {"b_grid", "warm_start", "workers", "aux_lattice"},
    "flow": {"step0", "max_iters", "energy_tol", "grad_tol", "backtracking", "init_kind", "init_width",
             "init_center", "scheme", "stall_window"},
    "groundstate": {"r_max", "n_nodes", "shoot_tol"},
    "output": {"dir"},
}
_SCALARS = {"seed", "regime"}
_GS_DEFAULTS = {"r_max": 20.0, "n_nodes": 8000, "shoot_tol": 1e-10}


@dataclass
class RunConfig:
    domain: dict
    potential: dict
    physics: dict
    sweep: dict
    flow: dict = field(default_factory=dict)
    groundstate: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    seed: int = 0
    regime: str = "auto"
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        parser = _Parser(text)
        doc = parser.document()
        lines = parser.lines
        for name, val in doc.items():
            if name in _SCALARS:
                continue
            if name not in _ALLOWED:
                raise ConfigError("unknown block", line=lines.get(name), field=name)
            if not isinstance(val, dict):
                raise ConfigError("expected a { ... } block", line=lines.get(name), field=name)
            for key in val:
                if key not in _ALLOWED[name]:
                    path = f"{name}.{key}"
                    raise ConfigError("unknown key", line=lines.get(path), field=path)
        for need in ("domain", "potential", "physics", "sweep"):
            if need not in doc:
                raise ConfigError("missing block", field=need)
        cfg = cls(
            domain=doc["domain"], potential=doc["potential"], physics=doc["physics"], sweep=doc["sweep"],
            flow=doc.get("flow", {}), groundstate=doc.get("groundstate", {}), output=doc.get("output", {}),
            seed=doc.get("seed", 0), regime=doc.get("regime", "auto"), lines=lines,
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    def serialize(self) -> str:
        out = []
        for name in ("domain", "potential", "physics", "sweep", "flow", "groundstate", "output"):
            block = getattr(self, name)
            if block:
                body = ", ".join(f"{k}={_fmt(v)}" for k, v in block.items())
                out.append(f"{name} {{ {body} }}")
        out.append(f"seed = {_fmt(self.seed)}")
        out.append(f"regime = {_fmt(self.regime)}")
        return "\n".join(out) + "\n"

    def _err(self, msg, path):
        return ConfigError(msg, line=self.lines.get(path), field=path)

    def validate(self) -> None:
        d = self.domain
        shape = d.get("shape")
        if shape not in ("disk", "rectangle", "mask"):
            raise self._err(f"shape must be disk, rectangle or mask, not {shape!r}", "domain.shape")
        if not isinstance(d.get("h"), (int, float)) or d["h"] <= 0:
            raise self._err("grid spacing h must be a positive number", "domain.h")
        if shape == "disk" and ("center" not in d or "radius" not in d):
            raise self._err("disk needs center and radius", "domain")
        if shape == "rectangle" and len(d.get("bounds", [])) != 4:
            raise self._err("rectangle needs bounds=[a, b, c, d]", "domain.bounds")
        if shape == "mask" and "mask_file" not in d:
            raise self._err("mask domain needs mask_file", "domain.mask_file")
        wells = self.potential.get("wells")
        if not isinstance(wells, list) or not wells:
            raise self._err("wells must be a nonempty list", "potential.wells")
        for k, w in enumerate(wells):
            if not isinstance(w, dict) or "x" not in w or "p" not in w or len(w["x"]) != 2:
                raise self._err(f"well {k} must look like {{x=[x, y], p=2}}", "potential.wells")
        ph = self.physics
        if ("beta" in ph) == ("beta_ratio" in ph):
            raise self._err("give exactly one of beta or beta_ratio", "physics")
        if any(v < 0 for v in ph.values()):
            raise self._err("beta must be nonnegative", "physics")
        self.b_values()
        if "init_kind" in self.flow and self.flow["init_kind"] not in ("gaussian", "eigenmode"):
            raise self._err("init_kind must be gaussian or eigenmode", "flow.init_kind")
        try:
            self.flow_config()
        except (TypeError, ValueError) as exc:
            raise self._err(str(exc), "flow") from None
        if not isinstance(self.seed, int):
            raise self._err("seed must be an integer", "seed")

    def b_values(self) -> list:
        spec = self.sweep.get("b_grid")
        path = "sweep.b_grid"
        if isinstance(spec, list):
            vals = [float(v) for v in spec]
        elif isinstance(spec, str):
            vals = parse_b_grid(spec, self._err)
        else:
            raise self._err("b_grid must be a list or 'hi:lo:geometric:n'", path)
        if not vals:
            raise self._err("b_grid is empty", path)
        if any(v <= 0 for v in vals) or any(b >= a for a, b in zip(vals, vals[1:])):
            raise self._err("b_grid must be positive and strictly decreasing", path)
        return vals

    def flow_config(self) -> FlowConfig:
        kw = dict(self.flow)
        if "init_center" in kw:
            kw["init_center"] = tuple(kw["init_center"])
        return FlowConfig(seed=self.seed, **kw)

    def groundstate_params(self) -> dict:
        return {**_GS_DEFAULTS, **self.groundstate}


def parse_b_grid(text: str, err=None) -> list:
    """``hi:lo:geometric:n`` or ``hi:lo:linear:n``, listed in decreasing order."""
    parts = text.split(":")
    bad = (err or (lambda m, p: ConfigError(m, field=p)))
    if len(parts) != 4 or parts[2] not in ("geometric", "linear"):
        raise bad(f"cannot read b grid {text!r}", "sweep.b_grid")
    try:
        hi, lo, n = float(parts[0]), float(parts[1]), int(parts[3])
    except ValueError:
        raise bad(f"cannot read b grid {text!r}", "sweep.b_grid") from None
    if n <= 0:
        raise bad("b_grid is empty", "sweep.b_grid")
    if n == 1:
        return [hi]
    if parts[2] == "geometric":
        if hi <= 0 or lo <= 0:
            raise bad("geometric b grid needs positive ends", "sweep.b_grid")
        return [float(v) for v in np.geomspace(hi, lo, n)]
    return [float(v) for v in np.linspace(hi, lo, n)]


def _normalize(obj):
    if isinstance(obj, float) and obj.is_integer():
        return int(obj)
    if isinstance(obj, dict):
        return {k: _normalize(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    return obj


def cache_key(inputs) -> str:
    """SHA-256 over the canonical JSON form of ``inputs`` (a dict, RunConfig or config text)."""
    if isinstance(inputs, str):
        inputs = RunConfig.parse(inputs)
    if isinstance(inputs, RunConfig):
        inputs = {k: getattr(inputs, k) for k in
                  ("domain", "potential", "physics", "sweep", "flow", "groundstate", "output", "seed", "regime")}
    blob = json.dumps(_normalize(inputs), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# -- building blocks ----------------------------------------------------------

def cache_dir(default) -> Path:
    return Path(os.environ.get("KMINLAB_CACHE_DIR") or default)


def cached_ground_state(params: dict, where) -> RadialProfile:
    """Solve for Q once per (r_max, n_nodes, shoot_tol) and keep it in ``where``."""
    params = {**_GS_DEFAULTS, **params}
    key = cache_key({"groundstate": params})[:16]
    d = ensure_dir(cache_dir(where))
    path = d / f"groundstate-{key}.npz"
    if path.exists():
        try:
            return load_profile_npz(path)
        except Exception:
            path.unlink()
    prof = solve_ground_state(float(params["r_max"]), int(params["n_nodes"]), float(params["shoot_tol"]))
    tmp = d / f".{path.name}.{os.getpid()}.tmp.npz"
    save_profile_npz(tmp, prof)
    os.replace(tmp, path)
    return prof


def build_problem(cfg: RunConfig):
    d = cfg.domain
    shape = {"shape": d["shape"]}
    if d["shape"] == "disk":
        shape.update(center=tuple(d["center"]), radius=float(d["radius"]))
    elif d["shape"] == "rectangle":
        shape.update(bounds=tuple(d["bounds"]))
    else:
        shape.update(mask=np.load(d["mask_file"]), origin=tuple(d.get("origin", (0.0, 0.0))))
    try:
        grid = build_grid(shape, float(d["h"]), d.get("assume_interior_ball"))
    except KminlabError as exc:
        raise ConfigError(str(exc), line=cfg.lines.get("domain"), field="domain") from None
    wells = [(tuple(w["x"]), float(w["p"])) for w in cfg.potential["wells"]]
    try:
        spec = sample_potential(grid, wells, cfg.potential.get("h", "const:1"))
    except WellOutsideClosure as exc:
        raise ConfigError(str(exc), line=cfg.lines.get("potential.wells"), field="potential.wells") from None
    except ValueError as exc:
        raise ConfigError(str(exc), line=cfg.lines.get("potential"), field="potential") from None
    return grid, spec


def beta_value(cfg: RunConfig, beta_star: float) -> float:
    ph = cfg.physics
    return float(ph["beta"]) if "beta" in ph else float(ph["beta_ratio"]) * beta_star


def flattest_wells(pred: RegimePrediction, grid, spec) -> list:
    """Indices of the flattest wells on the predicted side, all with the least κ."""
    h = max(grid.hx, grid.hy)
    p = max(spec.exponents)
    if pred.boundary:
        side = [i for i, q in enumerate(spec.exponents) if q == p and grid.boundary_distance(spec.centers[i]) <= 0.5 * h]
    else:
        side = [i for i, q in enumerate(spec.exponents) if q == p and grid.boundary_distance(spec.centers[i]) > 2 * h]
    k = min(spec.kappa(i) for i in side)
    return [i for i in side if spec.kappa(i) <= k * (1 + 1e-9)]


def initial_center(pred: RegimePrediction, grid, spec, b: float, well: int | None = None):
    """Start point for a flattest well, moved inward by the predicted offset on the boundary."""
    i = flattest_wells(pred, grid, spec)[0] if well is None else well
    x0 = spec.centers[i]
    if not pred.boundary:
        return tuple(float(x) for x in x0)
    h = max(grid.hx, grid.hy)
    shift = max(pred.predicted_dist(b), 4 * h)
    return tuple(float(v) for v in np.asarray(x0) - shift * grid.outward_normal(x0))


def boundary_anchor(pred: RegimePrediction, grid, spec, well: int | None = None):
    if not pred.boundary:
        return None
    i = flattest_wells(pred, grid, spec)[0] if well is None else well
    return tuple(float(v) for v in spec.centers[i])


def captured_well(spec, z) -> int:
    """Index of the flattest well nearest to the peak."""
    p = max(spec.exponents)
    flat = [i for i, q in enumerate(spec.exponents) if q == p]
    return min(flat, key=lambda i: math.hypot(z[0] - spec.centers[i][0], z[1] - spec.centers[i][1]))


# -- sweep records ------------------------------------------------------------

SWEEP_COLUMNS = ["index", "b", "beta", "energy", "kinetic", "kirchhoff", "potential", "quartic", "mu",
                 "eps_b", "zx", "zy", "iterations", "converged", "residual", "mass_drift", "gn_ratio",
                 "ebar_lattice", "start_well", "well", "error", "valid"]


def _num(x) -> str:
    return repr(float(x))


def sweep_row(k: int, r: MinimizeResult, ebar_lattice: float = math.nan, start_well: int = -1,
              well: int = -1) -> list:
    bd = r.breakdown
    return [str(k), _num(r.b), _num(r.beta), _num(bd.total), _num(bd.kinetic), _num(bd.kirchhoff),
            _num(bd.potential), _num(bd.quartic), _num(bd.mu), _num(r.eps_b), _num(r.max_point[0]),
            _num(r.max_point[1]), str(r.iterations), "1" if r.converged else "0", _num(r.residual),
            _num(r.mass_drift), _num(gn_ratio(r.u)) if r.error is None else "nan", _num(ebar_lattice),
            str(start_well), str(well), (r.error or "").replace(",", ";"), "ok"]


def read_sweep(path) -> list:
    """Rows of a sweep.csv as dicts; rows without the trailing validity marker are dropped."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            if len(row) != len(header) or row[-1] != "ok":
                continue
            rec = dict(zip(header, row))
            for k in header:
                if k in ("error", "valid"):
                    continue
                rec[k] = float(rec[k]) if k not in ("index", "iterations", "converged", "start_well", "well") \
                    else int(rec[k])
            rows.append(rec)
    return rows


class SweepWriter:
    """Appends one flushed line per finished entry, so an interrupted sweep keeps its rows."""

    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(SWEEP_COLUMNS)
        self.fh.flush()
        self.k = 0

    def add(self, r: MinimizeResult, ebar_lattice: float = math.nan, start_well: int = -1, well: int = -1):
        self.w.writerow(sweep_row(self.k, r, ebar_lattice, start_well, well))
        self.fh.flush()
        os.fsync(self.fh.fileno())
        self.k += 1

    def close(self):
        self.fh.close()


def _solo(args):
    grid, spec, b, beta, fcfg, center, width, bs = args
    init = gaussian_field(grid, center, width)
    return minimize(grid, spec, b, beta, replace(fcfg, init_kind="warm"), init=init, beta_star=bs)


def run_sweep(cfg: RunConfig, profile: RadialProfile, grid, spec, b_values=None, on_result=None) -> tuple:
    """Continuation sweep (or independent solves when warm starts are off).

    With several equally flat wells there is one sweep per well start; every
    run is reported and the analysis keeps the lowest energy per b.
    """
    bs = profile.beta_star
    beta = beta_value(cfg, bs)
    pred = predict_for(spec, grid, profile, beta, cfg.regime)
    fcfg = cfg.flow_config()
    b_values = cfg.b_values() if b_values is None else b_values
    width = fcfg.init_width or 2.0 * pred.predicted_eps(b_values[0])
    lattice = cfg.sweep.get("aux_lattice", not pred.critical)
    wells = [-1] if fcfg.init_center or fcfg.init_kind == "eigenmode" else flattest_wells(pred, grid, spec)

    def finish(r, start):
        ebar_h = math.nan
        if lattice and not pred.critical and r.error is None:
            # V ≡ 0 on the same grid, started from the computed peak
            ebar_h = auxiliary_minimum(grid, r.b, beta, fcfg, r.u).energy
        captured = captured_well(spec, r.max_point) if r.error is None else -1
        if on_result is not None:
            on_result(r, ebar_h, start, captured)
        return r, ebar_h

    def center_of(w):
        return fcfg.init_center or initial_center(pred, grid, spec, b_values[0], None if w < 0 else w)

    out = []
    if cfg.sweep.get("warm_start", True):
        for w in wells:
            init = None if fcfg.init_kind == "eigenmode" else gaussian_field(grid, center_of(w), width)
            anchor = boundary_anchor(pred, grid, spec, None if w < 0 else w)
            continuation_sweep(
                grid, spec, beta, b_values, fcfg, eps_predictor=pred.predicted_eps,
                anchor=anchor, dist_predictor=pred.predicted_dist if anchor is not None else None,
                init=init, beta_star=bs, on_result=lambda r, w=w: out.append(finish(r, w)),
            )
    else:
        jobs = [(grid, spec, b, beta, fcfg, center_of(w), width, bs) for w in wells for b in b_values]
        starts = [w for w in wells for _ in b_values]
        workers = int(cfg.sweep.get("workers", 1))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for r, w in zip(pool.map(_solo, jobs), starts):
                    out.append(finish(r, w))
        else:
            for job, w in zip(jobs, starts):
                out.append(finish(_solo(job), w))
    return pred, out


# -- analysis -----------------------------------------------------------------

REPORT_COLUMNS = ["b", "e", "e_normalized", "predicted_limit", "eps", "eps_normalized", "dist",
                  "dist_normalized", "gn_ratio", "trial_upper", "converged", "ebar", "ebar_lattice",
                  "e_normalized_lattice", "well"]


def peak_distance(pred: RegimePrediction, grid, spec, z) -> float:
    """|z - x₀|: to the well for interior regimes, to ∂Ω for boundary regimes."""
    if pred.boundary:
        return max(grid.boundary_distance(z), 0.0)
    c = min(
        (c for c, p in zip(spec.centers, spec.exponents) if p == max(spec.exponents)),
        key=lambda c: math.hypot(z[0] - c[0], z[1] - c[1]),
    )
    return math.hypot(z[0] - c[0], z[1] - c[1])


def select_lowest(rows: list) -> list:
    """One row per b: the lowest converged energy over all starts (any row if none converged)."""
    best = {}
    for row in rows:
        key = (not row["converged"], row["energy"] if math.isfinite(row["energy"]) else math.inf)
        if row["b"] not in best or key < best[row["b"]][0]:
            best[row["b"]] = (key, row)
    return [row for _, row in best.values()]


def analyze_rows(rows: list, pred: RegimePrediction, grid=None, spec=None, profile=None) -> list:
    report = []
    for row in select_lowest(rows):
        b, e, eps = row["b"], row["energy"], row["eps_b"]
        z = (row["zx"], row["zy"])
        dist = peak_distance(pred, grid, spec, z) if grid is not None else math.nan
        trial = math.nan
        if grid is not None and profile is not None:
            try:
                trial = trial_upper_bound(pred, grid, spec, profile, b)
            except (ValueError, KminlabError):
                trial = math.nan
        ebar = pred.energy_offset(b)
        ebar_h = row.get("ebar_lattice", math.nan)
        e_norm_h = (e - ebar_h) / pred.energy_scale(b) if math.isfinite(ebar_h) else math.nan
        report.append({
            "b": b, "e": e, "e_normalized": pred.normalized_energy(b, e),
            "predicted_limit": pred.energy_limit, "eps": eps,
            "eps_normalized": pred.normalized_eps(b, eps),
            "dist": dist,
            "dist_normalized": pred.normalized_dist(b, eps, dist) if math.isfinite(dist) else math.nan,
            "gn_ratio": row["gn_ratio"], "trial_upper": trial, "converged": int(row["converged"]),
            "ebar": ebar, "ebar_lattice": ebar_h, "e_normalized_lattice": e_norm_h,
            "well": row.get("well", -1),
        })
    return report


def write_report(path, report: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rec in report:
            w.writerow([str(rec[k]) if k in ("converged", "well") else _num(rec[k]) for k in REPORT_COLUMNS])


def write_fits(path, rows: list, pred: RegimePrediction) -> None:
    """Power-law (and log-corrected) fits of the energy over the fit window."""
    ok = [r for r in select_lowest(rows) if r["converged"]][-6:]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "with_log", "exponent", "log_power", "prefactor", "r_squared", "b_min", "b_max"])
        if len(ok) < 4:
            return
        for name, vals in (("energy", [r["energy"] - pred.energy_offset(r["b"]) for r in ok]),
                           ("eps", [r["eps_b"] for r in ok])):
            pts = list(zip([r["b"] for r in ok], vals))
            for with_log in (False, True):
                try:
                    f = fit_scaling(pts, with_log)
                except (ValueError, KminlabError):
                    continue
                w.writerow([name, int(with_log), _num(f.exponent), _num(f.log_power), _num(f.prefactor),
                            _num(f.r_squared), _num(f.window[0]), _num(f.window[1])])


# -- full pipeline ------------------------------------------------------------

def run_experiment(cfg: RunConfig, out_dir=None, log=None) -> int:
    """Ground state, sweep and analysis; returns 0 iff every sweep entry converged."""
    out = ensure_dir(out_dir or cfg.output.get("dir", "kminlab-out"))
    say = log or (lambda msg: None)
    profile = cached_ground_state(cfg.groundstate_params(), out / ".cache")
    write_profile_csv(out / "q_profile.csv", profile)
    grid, spec = build_problem(cfg)
    writer = SweepWriter(out / "sweep.csv")
    finished = []

    def on_result(r, ebar_h, start, captured):
        writer.add(r, ebar_h, start, captured)
        finished.append(r)
        say(f"b={r.b:.4g} e={r.energy:.10g} eps={r.eps_b:.4g} iters={r.iterations} converged={r.converged}")

    try:
        pred, _ = run_sweep(cfg, profile, grid, spec, on_result=on_result)
    finally:
        writer.close()
        done = [r for r in finished if r.error is None]
        if done:
            b_min = min(r.b for r in done)
            write_kfld(out / "field.kfld", min((r for r in done if r.b == b_min), key=lambda r: r.energy).u)
    rows = read_sweep(out / "sweep.csv")
    write_report(out / "report.csv", analyze_rows(rows, pred, grid, spec, profile))
    write_fits(out / "fit.csv", rows, pred)
    return 0 if rows and all(r["converged"] for r in rows) and len(select_lowest(rows)) == len(cfg.b_values()) else 1
