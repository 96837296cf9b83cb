"""TOML run configuration with error messages that name the key and line."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .expr import ExpressionSyntaxError, UnknownIdentifier
from .grid import make_control_grid, make_uniform_grid
from .model import (InvalidSpec, MissingParam, ProblemSpec, UnknownModel, UnsupportedCoupling,
                    builtin_model)


class ConfigError(ValueError):
    def __init__(self, key, line, message):
        where = f" (line {line})" if line else ""
        super().__init__(f"{key}: {message}{where}")
        self.key = key
        self.line = line


def _locate(text, section, key=None):
    """1-based line of ``key`` inside ``[section]``, or of the section header."""
    current = None
    header_line = None
    parts = section.split(".")
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", line)
        if m:
            current = m.group(1)
            if current == section:
                header_line = no
            continue
        if key is None:
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
        if current == parts[0] and len(parts) > 1 and re.match(rf"^{re.escape(parts[1])}\s*=", line):
            return no
    return header_line


@dataclass
class RunConfig:
    spec: ProblemSpec
    grid: object
    cgrid: object
    solve: dict = field(default_factory=dict)
    mfg: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    text: str = ""


class _Reader:
    def __init__(self, data, text):
        self.data = data
        self.text = text

    def section(self, name, required=True):
        if name not in self.data:
            if required:
                raise ConfigError(name, None, "missing section")
            return {}
        sec = self.data[name]
        if not isinstance(sec, dict):
            raise ConfigError(name, _locate(self.text, name), "must be a table")
        return sec

    def get(self, sec_name, sec, key, kind=None, default=...):
        if key not in sec:
            if default is ...:
                raise ConfigError(f"{sec_name}.{key}", _locate(self.text, sec_name),
                                  "missing required key")
            return default
        val = sec[key]
        if kind is not None:
            try:
                val = kind(val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{sec_name}.{key}", _locate(self.text, sec_name, key),
                                  f"invalid value: {exc}") from exc
        return val

    def fail(self, sec_name, key, msg):
        raise ConfigError(f"{sec_name}.{key}", _locate(self.text, sec_name, key), msg)


def _floats(v):
    if isinstance(v, (int, float)):
        return [float(v)]
    return [float(t) for t in v]


def _ints(v):
    if isinstance(v, int):
        return [v]
    out = []
    for t in v:
        if not isinstance(t, int) or isinstance(t, bool):
            raise ValueError(f"expected integers, got {t!r}")
        out.append(t)
    return out


def _build_spec(r, model, grid_sec):
    if "builtin" in model:
        params = dict(model.get("params", {}))
        try:
            spec = builtin_model(model["builtin"], params)
        except UnknownModel as exc:
            r.fail("model", "builtin", str(exc.args[0]))
        except MissingParam as exc:
            line = _locate(r.text, "model.params") or _locate(r.text, "model", "params")
            raise ConfigError("model.params", line, str(exc.args[0])) from exc
        except (InvalidSpec, ExpressionSyntaxError, UnknownIdentifier, UnsupportedCoupling) as exc:
            r.fail("model", "params", str(exc))
        return spec
    d = r.get("model", model, "d", int)
    kw = {}
    for key in ("drift", "diffusion", "case"):
        kw[key] = r.get("model", model, key)
    for key in ("control_dirs", "intrinsic_dirs", "intrinsic_cost", "control_cost"):
        if key in model:
            kw[key] = model[key]
    for key in ("running_cost", "domain", "name"):
        if key in model:
            kw[key] = model[key]
    for key in ("lyapunov_exponent", "k1", "k2", "gamma_lower_bound"):
        if key in model:
            kw[key] = r.get("model", model, key, float)
    lo = r.get("grid", grid_sec, "lo", _floats)
    hi = r.get("grid", grid_sec, "hi", _floats)
    try:
        return ProblemSpec(d=d, lo=lo, hi=hi, **kw)
    except (ExpressionSyntaxError, UnknownIdentifier, UnsupportedCoupling, InvalidSpec,
            ValueError) as exc:
        bad = next((k for k in ("drift", "diffusion", "control_dirs", "intrinsic_dirs",
                                "running_cost", "control_cost", "intrinsic_cost", "case",
                                "domain") if k in model and str(model[k]) in str(exc)),
                   "drift")
        r.fail("model", bad, str(exc))


def load_config(path=None, text=None):
    if text is None:
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise ConfigError("config", None, f"cannot read {path}: {exc}") from exc
        text = raw.decode("utf-8", errors="replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError("toml", int(m.group(1)) if m else None, str(exc)) from exc
    return parse_config(data, text)


def parse_config(data, text=""):
    r = _Reader(data, text)
    model = r.section("model")
    grid_sec = r.section("grid")
    spec = _build_spec(r, model, grid_sec)
    counts = r.get("grid", grid_sec, "counts", _ints)
    lo = r.get("grid", grid_sec, "lo", _floats, list(spec.lo))
    hi = r.get("grid", grid_sec, "hi", _floats, list(spec.hi))
    if len(lo) != spec.d or len(hi) != spec.d:
        r.fail("grid", "lo", f"box needs {spec.d} entries")
    if len(counts) == 1 and spec.d > 1:
        counts = counts * spec.d
    if len(counts) != spec.d:
        r.fail("grid", "counts", f"needs {spec.d} entries")
    try:
        spec = spec.with_box(lo, hi)
        grid = make_uniform_grid(list(zip(lo, hi)), counts)
    except (ValueError, InvalidSpec) as exc:
        r.fail("grid", "counts", str(exc))
    jumps = grid_sec.get("jumps")
    try:
        if jumps is None:
            cgrid = make_control_grid(spec.d3, grid)
        elif isinstance(jumps, dict):
            cgrid = make_control_grid(spec.d3, grid, y_min=jumps.get("y_min"),
                                      ratio=float(jumps.get("ratio", 2.0)),
                                      count=jumps.get("count"))
        else:
            cgrid = make_control_grid(spec.d3, grid, jumps=jumps)
    except (ValueError, TypeError) as exc:
        r.fail("grid", "jumps", str(exc))
    solve = dict(r.section("solve", required=False))
    solve.setdefault("tol", 1e-8)
    mfg = dict(r.section("mfg", required=False))
    sim = dict(r.section("sim", required=False))
    for key, kind in (("T", float), ("dt", float), ("paths", int), ("seed", int),
                      ("bridge_levels", int), ("batches", int), ("burn_in", float)):
        if key in sim:
            sim[key] = r.get("sim", sim, key, kind)
    for key, kind in (("damping", float), ("tol", float), ("max_iter", int),
                      ("value_tol", float)):
        if key in mfg:
            mfg[key] = r.get("mfg", mfg, key, kind)
    return RunConfig(spec, grid, cgrid, solve, mfg, sim, data, text)


def mfg_spec(cfg):
    """Apply the cost overrides of the [mfg] section."""
    m = cfg.mfg
    r = _Reader(cfg.raw, cfg.text)
    try:
        return cfg.spec.with_costs(
            running_cost=m.get("running_cost"),
            intrinsic_cost=m.get("intrinsic_cost"),
            control_cost=m.get("control_cost"),
        )
    except (ExpressionSyntaxError, UnknownIdentifier, UnsupportedCoupling, InvalidSpec) as exc:
        key = next((k for k in ("control_cost", "running_cost", "intrinsic_cost") if k in m),
                   "control_cost")
        r.fail("mfg", key, str(exc))
