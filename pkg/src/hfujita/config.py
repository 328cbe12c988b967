"""Flat ``section.key = value`` configuration with defaults and validation."""

from __future__ import annotations

from dataclasses import dataclass

from .hgeom import UniformGrid
from .solver import DEGENERATE, POROUS, InitialData, PdeParams, StepControl


class ConfigError(ValueError):
    pass


# key -> (type, default); "floats" is a comma-separated list of decimals
SCHEMA = {
    "grid.n": (int, 1),
    "grid.nx": (int, 33),
    "grid.ny": (int, 33),
    "grid.nt": (int, 33),
    "grid.lx": (float, 4.0),
    "grid.ly": (float, 4.0),
    "grid.lt": (float, 16.0),
    "equation.family": (str, POROUS),
    "equation.m": (float, 1.0),
    "equation.sigma": (float, 2.0),
    "equation.q": (float, 0.5),
    "equation.p": (float, 2.0),
    "equation.reaction": (bool, True),
    "initial.family": (str, "bump"),
    "initial.amplitude": (float, 0.5),
    "initial.radius": (float, 1.0),
    "initial.epsilon": (float, 1.0),
    "initial.gamma": (float, 2.0),
    "initial.profile": (str, "bump"),
    "control.cfl_safety": (float, 0.25),
    "control.growth_cap": (float, 0.10),
    "control.dt_min": (float, 1e-30),
    "control.t_max": (float, 1.0),
    "control.blowup_threshold": (float, 1e8),
    "control.output_dt": (float, 0.0),
    "eigen.radius": (float, 1.0),
    "eigen.nx": (int, 33),
    "eigen.tol": (float, 1e-6),
    "eigen.attach": (bool, False),
    "sweep.a_values": ("floats", ()),
    "sweep.b_values": ("floats", ()),
    "sweep.amplitudes": ("floats", ()),
    "verify.samples": (int, 100000),
    "verify.box": (float, 4.0),
}


def _parse_value(key, kind, raw: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"malformed value for {key}: {raw!r}") from None


def _format_value(kind, value) -> str:
    if kind is bool:
        return "true" if value else "false"
    if kind is float:
        return repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


@dataclass(frozen=True)
class Config:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> str:
        """Deterministic ``key = value`` text; parse_config(echo()) round-trips."""
        return "\n".join(f"{k} = {_format_value(SCHEMA[k][0], self.values[k])}" for k in sorted(self.values))

    def with_overrides(self, pairs) -> "Config":
        text = self.echo() + "\n" + "\n".join(pairs)
        return parse_config(text)

    def grid(self) -> UniformGrid:
        v = self.values
        return UniformGrid((v["grid.lx"], v["grid.ly"], v["grid.lt"]),
                           (v["grid.nx"], v["grid.ny"], v["grid.nt"]), n=v["grid.n"])

    def params(self, a=None, b=None) -> PdeParams:
        v = self.values
        if v["equation.family"] == POROUS:
            return PdeParams.porous(v["equation.m"] if a is None else a, v["equation.sigma"] if b is None else b,
                                    v["grid.n"], v["equation.reaction"])
        return PdeParams.degenerate(v["equation.q"] if a is None else a, v["equation.p"] if b is None else b,
                                    v["grid.n"], v["equation.reaction"])

    def initial(self, amplitude=None) -> InitialData:
        v = self.values
        return InitialData(v["initial.family"], v["initial.amplitude"] if amplitude is None else amplitude,
                           v["initial.radius"], v["initial.epsilon"], v["initial.gamma"], v["initial.profile"])

    def control(self) -> StepControl:
        v = self.values
        return StepControl(v["control.cfl_safety"], v["control.growth_cap"], v["control.dt_min"],
                           v["control.t_max"], v["control.blowup_threshold"],
                           v["control.output_dt"] if v["control.output_dt"] > 0 else None)


def parse_config(text: str) -> Config:
    values = {k: d for k, (_, d) in SCHEMA.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, SCHEMA[key][0], raw)
    cfg = Config(values)
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    v = cfg.values
    if v["equation.family"] not in (POROUS, DEGENERATE):
        raise ConfigError(f"equation.family must be {POROUS} or {DEGENERATE}")
    for k in ("grid.nx", "grid.ny", "grid.nt", "eigen.nx"):
        if v[k] < 5:
            raise ConfigError(f"{k} = {v[k]}: the stencil needs at least 5 nodes per axis")
    if v["grid.n"] < 1:
        raise ConfigError("grid.n must be >= 1")
    if v["verify.samples"] < 1:
        raise ConfigError("verify.samples must be >= 1")
    if v["control.output_dt"] < 0:
        raise ConfigError("control.output_dt must be >= 0 (0 selects t_max/100)")
    try:
        cfg.grid()
        cfg.control()
        cfg.initial()
        if v["equation.family"] == POROUS:
            bs = v["sweep.b_values"] or (v["equation.sigma"],)
            as_ = v["sweep.a_values"] or (v["equation.m"],)
        else:
            bs = v["sweep.b_values"] or (v["equation.p"],)
            as_ = v["sweep.a_values"] or (v["equation.q"],)
        for a in as_:
            for b in bs:
                cfg.params(a, b)
        for amp in v["sweep.amplitudes"]:
            cfg.initial(amp)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not v["eigen.radius"] > 0 or not v["eigen.tol"] > 0:
        raise ConfigError("eigen.radius and eigen.tol must be positive")


def config_from_header(text: str) -> Config:
    """Rebuild a Config from the ``# `` header lines of an output CSV."""
    lines = []
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        lines.append(line[1:].strip())
    return parse_config("\n".join(lines))
