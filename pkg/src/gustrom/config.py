"""INI configuration with sections [model], [gust], [sweep], [rom], [sim].

Every key is optional and falls back to the documented default; unknown
sections or keys are errors that name the line and field.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .aerofoil import AerofoilParams
from .exceptions import ConfigError, GustromError
from .gust import DiscreteGustSpec, TurbulenceSpec
from .nmor import BasisSelection
from .sweep import SweepSpec, VelocityLaw

_FLOAT, _INT, _BOOL, _STR, _LIST = "float", "int", "bool", "str", "list"

_PARAM_KEYS = {f.name: _FLOAT for f in fields(AerofoilParams)}

SCHEMA = {
    "model": {
        "kind": _STR,
        **_PARAM_KEYS,
        "flutter_min": _FLOAT,
        "flutter_max": _FLOAT,
        "flutter_points": _INT,
    },
    "gust": {
        "kind": _STR,  # discrete | von_karman (single-run commands)
        "velocity_law": _STR,
        "fraction": _FLOAT,
        "U_inf": _FLOAT,
        "U_ref": _FLOAT,
        "H_ref": _FLOAT,
        "exponent": _FLOAT,
        "w_min": _FLOAT,
        "w_max": _FLOAT,
        "t0": _FLOAT,
        "H_g": _FLOAT,
        "w0": _FLOAT,
        "sigma_w": _FLOAT,
        "L_w": _FLOAT,
        "sample_rate": _FLOAT,
        "duration": _FLOAT,
        "seed": _INT,
    },
    "sweep": {
        "Hg_min": _FLOAT,
        "Hg_max": _FLOAT,
        "n_sites": _INT,
        "spacing": _STR,
        "metric_channels": _LIST,
        "validate_top_k": _INT,
        "batch_size": _INT,
        "workers": _INT,
        "fom_runs": _INT,
    },
    "rom": {
        "modes": _INT,
        "order": _INT,
        "origin_radius": _FLOAT,
        "origin_fraction": _FLOAT,
        "light_damping": _FLOAT,
        "pair_order": _STR,
        "skip_repeated": _BOOL,
    },
    "sim": {
        "step": _FLOAT,
        "decay_factor": _FLOAT,
        "min_margin": _FLOAT,
    },
}


@dataclass(frozen=True)
class FlutterGrid:
    u_min: float = 2.0
    u_max: float = 10.0
    points: int = 33

    def grid(self) -> np.ndarray:
        return np.linspace(self.u_min, self.u_max, self.points)


@dataclass(frozen=True)
class GustSettings:
    """Single-run gust (``simulate`` and ``gust-preview``)."""

    kind: str = "discrete"
    H_g: float = 55.0
    w0: float | None = None  # None: from the sweep's velocity law
    t0: float = 0.0
    U_inf: float = 1.0
    sigma_w: float = 0.1
    L_w: float = 10.0
    sample_rate: float = 10.0
    duration: float = 200.0
    seed: int = 0


@dataclass(frozen=True)
class Config:
    params: AerofoilParams = field(default_factory=AerofoilParams)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    gust: GustSettings = field(default_factory=GustSettings)
    flutter: FlutterGrid = field(default_factory=FlutterGrid)
    workers: int = 1
    fom_runs: int = 3
    source: str | None = None

    def discrete_gust(self) -> DiscreteGustSpec:
        g = self.gust
        w0 = g.w0
        if w0 is None:
            from .sweep import design_gust_velocity
            w0 = design_gust_velocity(self.sweep.velocity_law, g.H_g)
        return DiscreteGustSpec(w0=w0, H_g=g.H_g, t0=g.t0, U_inf=g.U_inf)

    def turbulence(self, seed: int | None = None) -> TurbulenceSpec:
        g = self.gust
        return TurbulenceSpec(g.sigma_w, g.L_w, g.U_inf,
                              g.seed if seed is None else seed,
                              g.sample_rate, g.duration)


def _key_lines(text: str) -> dict:
    """``(section, key) -> line number`` by a plain scan of the file."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip())] = no
    return lines


def _convert(raw: str, kind: str, where: dict):
    try:
        if kind == _FLOAT:
            value = float(raw)
            if math.isnan(value):
                raise ValueError("nan")
            return value
        if kind == _INT:
            return int(raw)
        if kind == _BOOL:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == _LIST:
            items = tuple(s.strip() for s in raw.split(",") if s.strip())
            if not items:
                raise ValueError("empty list")
            return items
        return raw.strip()
    except ValueError:
        raise ConfigError(f"cannot read {raw!r} as {kind}", **where) from None


def parse_config(text: str, source: str | None = None) -> Config:
    """Parse configuration text; see the module docstring."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", line=line) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError("duplicate key", field=exc.option,
                          line=exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError("duplicate section", field=exc.section,
                          line=exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any section", line=exc.lineno) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    lines = _key_lines(text)
    values: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", field=section,
                              line=lines.get((section, None)))
        values[section] = {}
        for key, raw in parser.items(section):
            where = {"field": f"{section}.{key}",
                     "line": lines.get((section, key))}
            if key not in SCHEMA[section]:
                raise ConfigError("unknown key", **where)
            values[section][key] = (_convert(raw, SCHEMA[section][key], where),
                                    where)
    try:
        return _assemble(values, source)
    except ConfigError:
        raise
    except GustromError as exc:
        raise ConfigError(str(exc)) from None


def _get(values, section, key, default):
    item = values.get(section, {}).get(key)
    return default if item is None else item[0]


# dataclass field name -> (section, key) for validation errors
_FIELD_SOURCES = {
    **{k: ("model", k) for k in _PARAM_KEYS},
    "rom_order": ("rom", "order"),
    "rom_modes": ("rom", "modes"),
    "pair_order": ("rom", "pair_order"),
    "origin_radius": ("rom", "origin_radius"),
    "velocity_law": ("gust", "velocity_law"),
    "kind": ("gust", "kind"),
    **{k: ("gust", k) for k in ("H_ref", "w_min", "H_g", "w0", "U_inf",
                                "sigma_w", "L_w", "sample_rate")},
    **{k: ("sweep", k) for k in ("Hg_min", "n_sites", "spacing",
                                 "validate_top_k", "metric_channels",
                                 "batch_size")},
    "step": ("sim", "step"),
}


def _locate(values, exc: ConfigError) -> ConfigError:
    """Attach the config key and line to a dataclass validation error."""
    if exc.field is None or exc.line is not None:
        return exc
    section, key = _FIELD_SOURCES.get(exc.field, (None, None))
    item = values.get(section, {}).get(key)
    if item is None:
        return exc
    return ConfigError(str(exc).split(" (")[0], **item[1])


def _assemble(values, source) -> Config:
    model_kind = _get(values, "model", "kind", "aerofoil")
    if model_kind != "aerofoil":
        where = values["model"]["kind"][1]
        raise ConfigError(f"unknown model kind '{model_kind}'", **where)
    try:
        params = AerofoilParams(**{
            k: _get(values, "model", k, getattr(AerofoilParams(), k))
            for k in _PARAM_KEYS})
        flutter = FlutterGrid(
            _get(values, "model", "flutter_min", FlutterGrid.u_min),
            _get(values, "model", "flutter_max", FlutterGrid.u_max),
            _get(values, "model", "flutter_points", FlutterGrid.points))
        law = VelocityLaw(
            kind=_get(values, "gust", "velocity_law", "constant"),
            fraction=_get(values, "gust", "fraction", 0.14),
            U_inf=_get(values, "gust", "U_inf", 1.0),
            U_ref=_get(values, "gust", "U_ref", 1.0),
            H_ref=_get(values, "gust", "H_ref", 1.0),
            exponent=_get(values, "gust", "exponent", 1.0 / 6.0),
            w_min=_get(values, "gust", "w_min", 0.0),
            w_max=_get(values, "gust", "w_max", math.inf),
        )
        basis = BasisSelection(
            origin_radius=_get(values, "rom", "origin_radius", None),
            origin_fraction=_get(values, "rom", "origin_fraction", 0.05),
            light_damping=_get(values, "rom", "light_damping", 0.2),
            pair_order=_get(values, "rom", "pair_order", "damping"),
            skip_repeated=_get(values, "rom", "skip_repeated", False),
        )
        sweep = SweepSpec(
            Hg_min=_get(values, "sweep", "Hg_min", 0.1),
            Hg_max=_get(values, "sweep", "Hg_max", 100.0),
            n_sites=_get(values, "sweep", "n_sites", 1000),
            spacing=_get(values, "sweep", "spacing", "log"),
            velocity_law=law,
            metric_channels=_get(values, "sweep", "metric_channels", ("xi",)),
            rom_order=_get(values, "rom", "order", 3),
            rom_modes=_get(values, "rom", "modes", 4),
            validate_top_k=_get(values, "sweep", "validate_top_k", 1),
            basis=basis,
            step=_get(values, "sim", "step", 0.01),
            decay_factor=_get(values, "sim", "decay_factor", 5.0),
            min_margin=_get(values, "sim", "min_margin", 0.0),
            t0=_get(values, "gust", "t0", 0.0),
            batch_size=_get(values, "sweep", "batch_size", 64),
        )
        kind = _get(values, "gust", "kind", "discrete")
        if kind not in ("discrete", "von_karman"):
            raise ConfigError(f"unknown gust kind '{kind}'", field="kind")
        gust = GustSettings(
            kind=kind,
            H_g=_get(values, "gust", "H_g", 55.0),
            w0=_get(values, "gust", "w0", None),
            t0=_get(values, "gust", "t0", 0.0),
            U_inf=law.U_inf,
            sigma_w=_get(values, "gust", "sigma_w", 0.1),
            L_w=_get(values, "gust", "L_w", 10.0),
            sample_rate=_get(values, "gust", "sample_rate", 10.0),
            duration=_get(values, "gust", "duration", 200.0),
            seed=_get(values, "gust", "seed", 0),
        )
        # validate the single-run gust eagerly
        DiscreteGustSpec(w0=0.0 if gust.w0 is None else gust.w0,
                         H_g=gust.H_g, t0=gust.t0, U_inf=gust.U_inf)
        TurbulenceSpec(gust.sigma_w, gust.L_w, gust.U_inf, gust.seed,
                       gust.sample_rate, gust.duration)
    except ConfigError as exc:
        raise _locate(values, exc) from None
    workers = _get(values, "sweep", "workers", 1)
    fom_runs = _get(values, "sweep", "fom_runs", 3)
    if workers < 1:
        raise ConfigError("workers must be positive",
                          **values["sweep"]["workers"][1])
    if fom_runs < 1:
        raise ConfigError("fom_runs must be positive",
                          **values["sweep"]["fom_runs"][1])
    return Config(params, sweep, gust, flutter, workers, fom_runs, source)


def load_config(path) -> Config:
    """Read and parse a configuration file (``OSError`` if missing)."""
    text = Path(path).read_text()
    return parse_config(text, source=str(path))


#: Configuration shipped for the reference aerofoil case.
DEFAULT_CONFIG_TEXT = """\
# Reference three-degree-of-freedom aerofoil at U* = 4.5.
# The structural constants other than the cubic coefficients and the reduced
# velocity are a PLACEHOLDER set (classical typical section plus a stiff
# light flap); see the README.

[model]
kind = aerofoil
a = -0.5
c_h = 0.5
x_alpha = 0.25
x_delta = 0.0125
r_a = 0.5
r_delta = 0.079
mu = 100
omega_xi_bar = 0.2
omega_delta_bar = 3.0
K_xi3 = 1.0
K_alpha3 = 3.0
U_star = 4.5
zeta_xi = 0
zeta_alpha = 0
zeta_delta = 0
flutter_min = 2.0
flutter_max = 10.0
flutter_points = 33

[gust]
kind = discrete
velocity_law = constant
fraction = 0.14
U_inf = 1.0
t0 = 0.0
H_g = 55.0
sigma_w = 0.1
L_w = 10.0
sample_rate = 10.0
duration = 200.0
seed = 0

[sweep]
Hg_min = 0.1
Hg_max = 100.0
n_sites = 1000
spacing = log
metric_channels = xi, alpha
validate_top_k = 3
batch_size = 100
workers = 1
fom_runs = 3

[rom]
# plunge and pitch pairs plus the two gust-coupling lag modes
modes = 6
order = 3
origin_radius = 0.15
light_damping = 0.25
pair_order = frequency
skip_repeated = true

[sim]
step = 0.01
decay_factor = 5.0
min_margin = 150.0
"""


def default_config() -> Config:
    return parse_config(DEFAULT_CONFIG_TEXT, source="<default aerofoil>")
