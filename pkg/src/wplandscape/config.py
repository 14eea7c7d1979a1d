"""YAML scenario files and bundled presets.

A scenario is a nested mapping.  Every section is optional except where a
subcommand needs it; unknown keys are rejected with their line number.

```yaml
name: fp-localization
anchor: "..."            # reference string echoed in the summary line
system:
  omega: 0.0             # N=1 shorthand, or omega_mat: [[...], ...]
  gamma: 1.0             # N=1 shorthand, or gamma_mat: [[...], ...]
  hbar: 1.0
  k_boltzmann: 1.0
bath:
  enabled: false
  temperature: 0.0
  cutoff: null           # null -> default rule
  scale: 1.0
  mode: stationary       # stationary | transient | classical
initial:
  widths: [1.0]
schedule:
  t_end: auto            # number, or auto (relaxation / diffusion horizon)
  samples: 201
  spacing: linear        # linear | log
  t_first: null          # first output time for log spacing
solver:
  method: auto           # auto | expm | rk45
  tol: 1.0e-9
  atol: 1.0e-12
outputs:
  trajectory: trajectory.csv
```

The ``landscape``, ``limits`` and ``sweep`` sections are described next to
the commands that read them in :mod:`wplandscape.cli`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, ValidationError
from .model import BathSpec, SystemSpec

PRESET_PACKAGE = "wplandscape.presets"

_SCHEMA = {
    "name": None, "anchor": None, "command": None, "description": None,
    "system": {"omega": None, "gamma": None, "omega_mat": None, "gamma_mat": None,
               "hbar": None, "k_boltzmann": None},
    "bath": {"enabled": None, "temperature": None, "cutoff": None, "scale": None, "mode": None},
    "initial": {"widths": None},
    "schedule": {"t_end": None, "samples": None, "spacing": None, "t_first": None},
    "solver": {"method": None, "tol": None, "atol": None},
    "outputs": {"trajectory": None, "table": None, "prefix": None},
    "landscape": {"panels": None, "dq": None, "dp": None},
    "limits": {"mode": None, "gamma": None, "width": None, "temperature": None, "t_end": None,
               "omegas": None, "scales": None},
    "sweep": {"gamma": None, "omega": None, "temperature": None, "workers": None, "hbar": None},
}
_PANEL_KEYS = {"name", "mode", "gamma", "omega", "delta_qxi", "delta_pxi", "temperature", "cutoff"}


class _Doc(dict):
    """Mapping that remembers the source line of every key path."""

    lines: dict


def _to_python(node, path, lines):
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = knode.value
            sub = path + (key,)
            if key in out:
                raise ConfigError(f"duplicate key '{'.'.join(sub)}'", f"line {knode.start_mark.line + 1}")
            lines[sub] = knode.start_mark.line + 1
            out[key] = _to_python(vnode, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def parse_config(text, source="<config>"):
    """Parse YAML text into a dict; errors carry line numbers and key paths."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}, line {mark.line + 1}" if mark else source
        raise ConfigError("malformed YAML", f"{where}: {getattr(exc, 'problem', exc)}") from None
    lines = {}
    doc = _Doc(_to_python(node, (), lines) if node is not None else {})
    if not isinstance(node, (yaml.MappingNode, type(None))):
        raise ConfigError("config root must be a mapping", source)
    doc.lines = lines
    _check_keys(doc, _SCHEMA, (), source)
    return doc


def _where(doc, path, source):
    line = getattr(doc, "lines", {}).get(tuple(path))
    return f"{source}, line {line}" if line else source


def _check_keys(doc, schema, path, source):
    node = doc
    for p in path:
        node = node[p]
    if not isinstance(node, dict):
        raise ConfigError(f"'{'.'.join(path)}' must be a mapping", _where(doc, path, source))
    for key, val in node.items():
        sub = path + (key,)
        if key not in schema:
            raise ConfigError(f"unknown key '{'.'.join(map(str, sub))}'", _where(doc, sub, source))
        if schema[key] is not None:
            _check_keys(doc, schema[key], sub, source)
    if path == ("landscape",) and "panels" in node:
        for i, panel in enumerate(node["panels"] or []):
            sub = path + ("panels", i)
            if not isinstance(panel, dict):
                raise ConfigError(f"'{'.'.join(map(str, sub))}' must be a mapping", source)
            for key in panel:
                if key not in _PANEL_KEYS:
                    raise ConfigError(f"unknown key '{'.'.join(map(str, sub + (key,)))}'",
                                      _where(doc, sub + (key,), source))


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("cannot read config", f"{path}: {exc.strerror}") from None
    doc = parse_config(text, str(path))
    doc.setdefault("name", path.stem)
    return doc


def preset_names():
    return sorted(p.name[:-5] for p in resources.files(PRESET_PACKAGE).iterdir()
                  if p.name.endswith(".yaml"))


def load_preset(name):
    res = resources.files(PRESET_PACKAGE) / f"{name}.yaml"
    if not res.is_file():
        raise ConfigError(f"unknown preset '{name}'", "available: " + ", ".join(preset_names()))
    doc = parse_config(res.read_text(), f"preset {name}")
    doc.setdefault("name", name)
    return doc


# ---------------------------------------------------------------- typed views

def get(doc, path, default=None, kind=None, source="<config>"):
    """Value at ``path`` (tuple of keys) converted by ``kind``; errors name the key and line."""
    node = doc
    for p in path:
        if not isinstance(node, dict) or p not in node or node[p] is None:
            return default
        node = node[p]
    if kind is None:
        return node
    try:
        return kind(node)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{'.'.join(path)}'",
                          f"{_where(doc, path, source)}: {exc}") from None


def _matrix(v):
    a = np.atleast_2d(np.asarray(v, dtype=float))
    if a.ndim != 2:
        raise ValueError("expected a matrix")
    return a


def _bool(v):
    if isinstance(v, bool):
        return v
    raise ValueError(f"expected true/false, got {v!r}")


def _positive_int(v):
    if isinstance(v, bool) or int(v) != v or v < 1:
        raise ValueError(f"expected a positive integer, got {v!r}")
    return int(v)


@dataclass(frozen=True)
class Scenario:
    name: str
    system: SystemSpec
    bath: BathSpec
    bath_mode: str
    widths: np.ndarray
    t_end: float | None  # None -> automatic horizon
    samples: int
    spacing: str
    t_first: float | None
    method: str
    tol: float
    atol: float
    outputs: dict = field(default_factory=dict)
    anchor: str = ""


def system_from(doc, source="<config>") -> SystemSpec:
    if "system" not in doc:
        raise ConfigError("missing section 'system'", source)
    hbar = get(doc, ("system", "hbar"), 1.0, float, source)
    kb = get(doc, ("system", "k_boltzmann"), 1.0, float, source)
    sysd = doc["system"]
    if "omega_mat" in sysd or "gamma_mat" in sysd:
        if "omega" in sysd or "gamma" in sysd:
            raise ConfigError("give either omega/gamma or omega_mat/gamma_mat, not both",
                              _where(doc, ("system",), source))
        om = get(doc, ("system", "omega_mat"), None, _matrix, source)
        ga = get(doc, ("system", "gamma_mat"), None, _matrix, source)
        if om is None or ga is None:
            raise ConfigError("omega_mat and gamma_mat must both be given", _where(doc, ("system",), source))
    else:
        w = get(doc, ("system", "omega"), None, float, source)
        g = get(doc, ("system", "gamma"), None, float, source)
        if w is None or g is None:
            raise ConfigError("system needs omega and gamma", _where(doc, ("system",), source))
        if w < 0:
            raise ConfigError("system.omega must be nonnegative", _where(doc, ("system", "omega"), source))
        om, ga = [[w * w]], [[g]]
    try:
        return SystemSpec(om, ga, hbar=hbar, k_boltzmann=kb)
    except ValidationError as exc:
        raise ConfigError(f"invalid system: {exc}", _where(doc, ("system",), source)) from None


def bath_from(doc, source="<config>"):
    enabled = get(doc, ("bath", "enabled"), "bath" in doc, _bool, source)
    mode = get(doc, ("bath", "mode"), "stationary", str, source)
    if mode not in ("stationary", "transient", "classical"):
        raise ConfigError("bath.mode must be stationary, transient or classical",
                          _where(doc, ("bath", "mode"), source))
    try:
        bath = BathSpec(temperature=get(doc, ("bath", "temperature"), 0.0, float, source),
                        cutoff=get(doc, ("bath", "cutoff"), None, float, source),
                        enabled=enabled,
                        scale=get(doc, ("bath", "scale"), 1.0, float, source))
    except ValidationError as exc:
        raise ConfigError(f"invalid bath: {exc}", _where(doc, ("bath",), source)) from None
    return bath, mode


def scenario_from(doc, source="<config>", tol=None) -> Scenario:
    system = system_from(doc, source)
    bath, mode = bath_from(doc, source)
    widths = np.atleast_1d(get(doc, ("initial", "widths"), [1.0] * system.n,
                               lambda v: np.asarray(v, dtype=float), source))
    if widths.shape != (system.n,) or np.any(~(widths > 0)):
        raise ConfigError(f"initial.widths must be {system.n} positive numbers",
                          _where(doc, ("initial", "widths"), source))
    t_end = get(doc, ("schedule", "t_end"), "auto", None, source)
    if t_end == "auto":
        t_end = None
    else:
        t_end = get(doc, ("schedule", "t_end"), None, float, source)
        if not (t_end > 0 and math.isfinite(t_end)):
            raise ConfigError("schedule.t_end must be positive", _where(doc, ("schedule", "t_end"), source))
    spacing = get(doc, ("schedule", "spacing"), "linear", str, source)
    if spacing not in ("linear", "log"):
        raise ConfigError("schedule.spacing must be linear or log", _where(doc, ("schedule", "spacing"), source))
    method = get(doc, ("solver", "method"), "auto", str, source)
    if method not in ("auto", "expm", "rk45"):
        raise ConfigError("solver.method must be auto, expm or rk45", _where(doc, ("solver", "method"), source))
    tol = tol if tol is not None else get(doc, ("solver", "tol"), 1e-9, float, source)
    if not tol > 0:
        raise ConfigError("tolerance must be positive", _where(doc, ("solver", "tol"), source))
    return Scenario(
        name=str(doc.get("name", "scenario")), system=system, bath=bath, bath_mode=mode,
        widths=widths, t_end=t_end,
        samples=get(doc, ("schedule", "samples"), 201, _positive_int, source),
        spacing=spacing, t_first=get(doc, ("schedule", "t_first"), None, float, source),
        method=method, tol=tol, atol=get(doc, ("solver", "atol"), 1e-12, float, source),
        outputs=dict(doc.get("outputs") or {}), anchor=str(doc.get("anchor", "")))
