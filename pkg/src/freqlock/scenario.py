"""Scenario files: sectioned key = value text with units in the key names.

Every key maps to a dataclass field of the same name. Unknown sections or
keys, unparsable values and physically invalid settings are reported as
``ConfigurationError`` with the file, line and field.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .spectra import STEEPEST, TARGET

ARMS = (1, 2)


@dataclass
class RunConfig:
    duration_min: float = 100.0
    seed: int = 0
    out_dir: str = "out"
    free_running_reference: bool = True
    settle_min: float = 1.0
    monitor_bin_s: float = 0.5
    window_min: float = 40.0
    window_step_min: float = 1.0
    decimation: int = 10
    psd_segment: int = 16384
    figures: bool = True


@dataclass
class EmitterConfig:
    t1_ps: float = 155.0
    t2_ps: float = 153.0
    r_set_cps: float = 3600.0
    dark_cps: float = 0.0
    monitor_rate_cps: float = 5000.0


@dataclass
class FilterConfig:
    temperature_c: float = 85.0
    field_mt: float = 0.0
    center_coeff_mhz_per_mt: float = 24.6
    width_coeff_mhz_per_mt: float = 40.8
    reference_center_ghz: float = 0.0
    reference_width_ghz: float = 1.2
    reference_field_mt: float = 0.0
    amplitude: float = 0.7
    lorentz_fraction: float = 0.5
    table: str = ""
    criterion: str = STEEPEST
    target_transmission: float = 0.0


@dataclass
class DriftConfig:
    creep: bool = True
    creep_dnu0_ghz: float = 0.9
    creep_alpha: float = 0.556
    creep_t0_s: float = -1.0
    creep_target_visibility: float = 0.0
    creep_target_min: float = 100.0
    h_flicker_ghz2: float = 1.1e-4
    h_white_ghz2_per_hz: float = 0.0
    f_low_hz: float = 1e-4
    f_high_hz: float = 0.5


@dataclass
class LockArmConfig:
    enabled: bool = True
    bandwidth_mhz: float = 30.0
    update_period_s: float = 0.1
    tau_cycle_s: float = 1e-6
    tau_filter_s: float = 0.0
    gain_ghz_per_v: float = 10.0
    v_min_v: float = -50.0
    v_max_v: float = 50.0
    polarity: int = 1
    deterministic: bool = False
    watchdog_ghz: float = 0.0
    step_ghz: float = 0.0
    step_time_s: float = math.inf


@dataclass
class HomConfig:
    v_true: float = -1.0
    rate1_cps: float = 5000.0
    rate2_cps: float = 5000.0
    dark1_cps: float = 104.0
    dark2_cps: float = 134.0
    t_acq_s: float = 2400.0
    blink: float = 1.0
    rep_period_ns: float = 1e3 / 76.0
    n_side: int = 6
    bins_per_period: int = 128
    half_window_ns: float = 0.0


SECTIONS = {
    "run": RunConfig,
    "emitter1": EmitterConfig,
    "emitter2": EmitterConfig,
    "filter1": FilterConfig,
    "filter2": FilterConfig,
    "drift1": DriftConfig,
    "drift2": DriftConfig,
    "lock1": LockArmConfig,
    "lock2": LockArmConfig,
    "hom": HomConfig,
}

EMITTER2_DEFAULTS = {"t1_ps": 187.0, "t2_ps": 123.0, "r_set_cps": 1500.0}


@dataclass
class Scenario:
    run: RunConfig = field(default_factory=RunConfig)
    emitter1: EmitterConfig = field(default_factory=EmitterConfig)
    emitter2: EmitterConfig = field(default_factory=lambda: EmitterConfig(**EMITTER2_DEFAULTS))
    filter1: FilterConfig = field(default_factory=FilterConfig)
    filter2: FilterConfig = field(default_factory=FilterConfig)
    drift1: DriftConfig = field(default_factory=DriftConfig)
    drift2: DriftConfig = field(default_factory=DriftConfig)
    lock1: LockArmConfig = field(default_factory=LockArmConfig)
    lock2: LockArmConfig = field(default_factory=LockArmConfig)
    hom: HomConfig = field(default_factory=HomConfig)
    source: str = field(default="", compare=False)

    def arm(self, k):
        return (
            getattr(self, f"emitter{k}"),
            getattr(self, f"filter{k}"),
            getattr(self, f"drift{k}"),
            getattr(self, f"lock{k}"),
        )

    @property
    def base_dir(self):
        return Path(self.source).parent if self.source else Path(".")

    def resolve(self, relpath):
        p = Path(relpath)
        return p if p.is_absolute() else self.base_dir / p


_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _convert(text, kind):
    if kind == "bool":
        try:
            return _BOOL[text.strip().lower()]
        except KeyError:
            raise ValueError(f"expected true/false, got {text!r}") from None
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
    if kind == "float":
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
    return text.strip()


def _format(value, kind):
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


def _line_index(text):
    """Map (section, key) to 1-based line numbers by scanning the raw file."""
    index = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = n
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = n
    return index


def _where(name, lines, section, key=None):
    n = lines.get((section, key)) or lines.get((section, None))
    loc = f"{name}:{n}" if n else name
    return f"{loc}: [{section}]" + (f" {key}" if key else "")


def parse_scenario(text, name="<scenario>"):
    """Parse scenario text into a validated :class:`Scenario`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=name)
    except configparser.Error as exc:
        raise ConfigurationError(f"{name}: {exc}") from None
    lines = _line_index(text)
    scn = Scenario(source=name)
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"{_where(name, lines, section)}: unknown section")
        cfg = getattr(scn, section)
        kinds = {f.name: f.type for f in dataclasses.fields(cfg)}
        for key, raw in cp.items(section):
            if key not in kinds:
                raise ConfigurationError(f"{_where(name, lines, section, key)}: unknown key")
            try:
                setattr(cfg, key, _convert(raw, kinds[key]))
            except ValueError as exc:
                raise ConfigurationError(f"{_where(name, lines, section, key)}: {exc}") from None
    for section, key, msg in _problems(scn):
        raise ConfigurationError(f"{_where(name, lines, section, key)}: {msg}")
    return scn


def load_scenario(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"{path}: no such scenario file")
    return parse_scenario(path.read_text(), name=str(path))


def serialize_scenario(scn: Scenario):
    out = []
    for section in SECTIONS:
        cfg = getattr(scn, section)
        out.append(f"[{section}]")
        for f in dataclasses.fields(cfg):
            out.append(f"{f.name} = {_format(getattr(cfg, f.name), f.type)}")
        out.append("")
    return "\n".join(out)


def _problems(scn: Scenario):
    """Yield (section, key, message) for every invalid setting."""
    r = scn.run
    if not r.duration_min > 0:
        yield "run", "duration_min", "must be positive"
    if r.window_min <= 0:
        yield "run", "window_min", "must be positive"
    elif r.window_min > r.duration_min:
        yield "run", "window_min", f"window longer than the {r.duration_min} min run"
    if r.window_step_min <= 0:
        yield "run", "window_step_min", "must be positive"
    if r.monitor_bin_s <= 0:
        yield "run", "monitor_bin_s", "must be positive"
    if r.settle_min < 0 or r.settle_min >= r.duration_min:
        yield "run", "settle_min", "must lie in [0, duration)"
    if r.decimation < 1:
        yield "run", "decimation", "must be at least 1"
    if r.psd_segment < 16:
        yield "run", "psd_segment", "must be at least 16 samples"
    if r.seed < 0:
        yield "run", "seed", "must be non-negative"
    for k in ARMS:
        em, fl, dr, lk = scn.arm(k)
        es, fs, ds, ls = f"emitter{k}", f"filter{k}", f"drift{k}", f"lock{k}"
        if not em.t1_ps > 0:
            yield es, "t1_ps", "must be positive"
        if not 0 < em.t2_ps <= 2 * em.t1_ps:
            yield es, "t2_ps", "must lie in (0, 2 * t1_ps]"
        if not em.r_set_cps > 0:
            yield es, "r_set_cps", "must be positive"
        if em.dark_cps < 0:
            yield es, "dark_cps", "must be non-negative"
        if em.monitor_rate_cps < 0:
            yield es, "monitor_rate_cps", "must be non-negative"
        width = fl.reference_width_ghz + 1e-3 * fl.width_coeff_mhz_per_mt * (fl.field_mt - fl.reference_field_mt)
        if not fl.table and not width > 0:
            yield fs, "field_mt", f"filter width {width:.4g} GHz is not positive"
        if not 0 < fl.amplitude <= 1:
            yield fs, "amplitude", "must lie in (0, 1]"
        if not 0 <= fl.lorentz_fraction <= 1:
            yield fs, "lorentz_fraction", "must lie in [0, 1]"
        if fl.criterion not in (STEEPEST, TARGET):
            yield fs, "criterion", f"must be {STEEPEST} or {TARGET}"
        if fl.criterion == TARGET and not 0 < fl.target_transmission < 1:
            yield fs, "target_transmission", "must lie in (0, 1)"
        if fl.table and not scn.resolve(fl.table).is_file():
            yield fs, "table", f"file {fl.table} not found"
        if dr.creep and dr.creep_t0_s > -1.0:
            yield ds, "creep_t0_s", "voltage step must precede t = 0 by at least 1 s"
        if dr.creep_target_visibility < 0 or dr.creep_target_visibility >= 1:
            yield ds, "creep_target_visibility", "must lie in [0, 1); 0 disables calibration"
        if dr.creep_target_min <= 0:
            yield ds, "creep_target_min", "must be positive"
        if dr.h_flicker_ghz2 < 0:
            yield ds, "h_flicker_ghz2", "must be non-negative"
        if dr.h_white_ghz2_per_hz < 0:
            yield ds, "h_white_ghz2_per_hz", "must be non-negative"
        if not 0 < dr.f_low_hz < dr.f_high_hz:
            yield ds, "f_high_hz", "need 0 < f_low_hz < f_high_hz"
        if not lk.bandwidth_mhz > 0:
            yield ls, "bandwidth_mhz", "must be positive"
        if not lk.update_period_s > 0:
            yield ls, "update_period_s", "must be positive"
        elif dr.f_high_hz >= 0.5 / lk.update_period_s:
            yield ds, "f_high_hz", "noise band reaches the Nyquist frequency of the update period"
        if not 0 < lk.tau_cycle_s <= lk.update_period_s:
            yield ls, "tau_cycle_s", "must lie in (0, update_period_s]"
        if lk.tau_filter_s < 0:
            yield ls, "tau_filter_s", "must be non-negative; 0 selects the automatic value"
        if lk.gain_ghz_per_v == 0:
            yield ls, "gain_ghz_per_v", "must be non-zero"
        if not lk.v_min_v < lk.v_max_v:
            yield ls, "v_max_v", "need v_min_v < v_max_v"
        if lk.polarity not in (1, -1):
            yield ls, "polarity", "must be 1 or -1"
        if lk.watchdog_ghz < 0:
            yield ls, "watchdog_ghz", "must be non-negative; 0 selects the automatic value"
    h = scn.hom
    if not (h.v_true == -1.0 or 0 <= h.v_true <= 1):
        yield "hom", "v_true", "must lie in [0, 1], or -1 to use the model value"
    for key in ("rate1_cps", "rate2_cps", "dark1_cps", "dark2_cps"):
        if getattr(h, key) < 0:
            yield "hom", key, "must be non-negative"
    if not h.t_acq_s > 0:
        yield "hom", "t_acq_s", "must be positive"
    if not 0 < h.blink <= 1:
        yield "hom", "blink", "must lie in (0, 1]"
    if not h.rep_period_ns > 0:
        yield "hom", "rep_period_ns", "must be positive"
    if h.n_side < 1:
        yield "hom", "n_side", "must be at least 1"
    if h.bins_per_period < 4:
        yield "hom", "bins_per_period", "must be at least 4"
    if h.half_window_ns < 0 or h.half_window_ns > 0.5 * h.rep_period_ns:
        yield "hom", "half_window_ns", "must lie in [0, rep_period_ns / 2]; 0 selects half the period"


def override(scn: Scenario, axis, value):
    """Copy of ``scn`` with ``section.key`` set to a numeric ``value``."""
    try:
        section, key = axis.split(".")
    except ValueError:
        raise ConfigurationError(f"axis {axis!r} must look like section.key") from None
    if section not in SECTIONS:
        raise ConfigurationError(f"axis {axis!r}: unknown section")
    kinds = {f.name: f.type for f in dataclasses.fields(SECTIONS[section])}
    if key not in kinds:
        raise ConfigurationError(f"axis {axis!r}: unknown key")
    if kinds[key] not in ("float", "int"):
        raise ConfigurationError(f"axis {axis!r} is not numeric")
    out = parse_scenario(serialize_scenario(scn), name=scn.source)
    cfg = getattr(out, section)
    cast = int if kinds[key] == "int" else float
    try:
        setattr(cfg, key, cast(value))
    except ValueError:
        raise ConfigurationError(f"axis {axis!r}: value {value!r} is not numeric") from None
    for sec, k, msg in _problems(out):
        raise ConfigurationError(f"{scn.source or '<scenario>'}: [{sec}] {k}: {msg} (override {axis}={value})")
    return out
