"""Run configuration: sectioned ``key = value`` files or the same schema in JSON.

Kernels are written as ``kind:param=value,param=value`` with ``;`` separating
list entries; tensor kernels append ``@ dyadic:c1=..,c2=..,eps_reg=..`` to a
radial profile. Example::

    [domain]
    L = 1
    N = 256

    [potentials]
    V1 = harmonic:stiffness=2,center=0.5
    V2 = gaussian:amplitude=0.2,width=0.2

    [hi]
    Z1 = gaussian:amplitude=0.3,width=0.2
    Z2 = gaussian:amplitude=0.3,width=0.2 @ dyadic:c1=1,c2=0.5,eps_reg=0.05
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dynamics import StepControl
from .errors import ConfigError
from .grid import Grid, build_grid, integrate
from .kernels import KernelSpec, ModelSpecs, TensorKernelSpec, TimeModulation

INITIAL_KINDS = ("uniform", "gaussian", "mixture", "cosine", "file")


def _number(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}", key) from None


def _value(text: str, key: str):
    text = text.strip()
    if ";" in text:
        return tuple(_number(t, key) for t in text.split(";") if t.strip())
    return _number(text, key)


def _params(text: str, key: str) -> dict:
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"parameter {item!r} is not of the form name=value", key)
        name, val = (s.strip() for s in item.split("=", 1))
        out[name] = _value(val, key)
    return out


def parse_kernel(text: str, key: str = "kernel") -> KernelSpec:
    text = text.strip()
    kind, _, rest = text.partition(":")
    try:
        return KernelSpec(kind.strip(), tuple(_params(rest, key).items()))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), key) from None


def parse_tensor(text: str, key: str = "tensor") -> TensorKernelSpec:
    profile_text, _, structure = text.partition("@")
    profile = parse_kernel(profile_text, key)
    structure = structure.strip()
    try:
        if not structure or structure == "isotropic":
            return TensorKernelSpec.isotropic(profile)
        kind, _, rest = structure.partition(":")
        if kind.strip() != "dyadic":
            raise ConfigError(f"unknown tensor structure {kind.strip()!r}", key)
        p = _params(rest, key)
        unknown = set(p) - {"c1", "c2", "eps_reg"}
        if unknown:
            raise ConfigError(f"unknown dyadic parameters {sorted(unknown)}", key)
        return TensorKernelSpec.dyadic(profile, p.get("c1", 1.0), p.get("c2", 0.0), p.get("eps_reg", 0.0))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), key) from None


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}", key)


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "uniform"
    params: tuple = ()
    zero_cell: int | None = None

    @property
    def p(self) -> dict:
        return dict(self.params)


@dataclass(frozen=True)
class SteppingOptions:
    control: StepControl = field(default_factory=StepControl)
    t_end: float = 0.1
    record_every: int = 1
    snapshot_every: int | None = None
    spectral_every: int | None = None
    rate: bool = False


@dataclass(frozen=True)
class EquilibriumOptions:
    damping: float = 1.0
    tol: float = 1e-12
    max_iter: int = 500
    reference: bool = True


@dataclass(frozen=True)
class ParticleOptions:
    N: int = 1000
    dt: float = 1e-4
    steps: int = 10000
    thin: int = 100
    burn_in: int = 0
    bins: int = 512
    pair_method: str = "auto"
    compare: str | None = None


@dataclass(frozen=True)
class RunConfig:
    L: float = 1.0
    N: int = 128
    d: int = 1
    initial: InitialSpec = field(default_factory=InitialSpec)
    specs: ModelSpecs = field(default_factory=ModelSpecs)
    stepping: SteppingOptions = field(default_factory=SteppingOptions)
    equilibrium: EquilibriumOptions = field(default_factory=EquilibriumOptions)
    particles: ParticleOptions = field(default_factory=ParticleOptions)
    output: str = "out"
    seed: int = 0

    @property
    def grid(self) -> Grid:
        return build_grid(self.L, self.N, self.d)


SECTIONS = ("domain", "initial", "potentials", "hi", "stepping", "equilibrium", "particles", "output", "run")

_STEP_KEYS = {f.name for f in fields(StepControl)}


def _get(sec, name, key, conv, default):
    if name not in sec:
        return default
    return conv(sec[name], key)


def _int(text, key):
    v = _number(text, key)
    if v != int(v):
        raise ConfigError(f"expected an integer, got {text!r}", key)
    return int(v)


def _opt_int(text, key):
    return None if text.strip().lower() in ("", "none") else _int(text, key)


def _check_known(cp, section, allowed):
    if section in cp:
        unknown = set(cp[section]) - set(allowed)
        if unknown:
            raise ConfigError("unknown key", f"{section}.{sorted(unknown)[0]}")


def from_parser(cp: configparser.ConfigParser) -> RunConfig:
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError("unknown section", sorted(unknown)[0])
    def sec(name):
        return cp[name] if name in cp else cp["DEFAULT"]

    _check_known(cp, "domain", ("l", "n", "d"))
    dom = sec("domain")
    L = _get(dom, "L", "domain.L", _number, 1.0)
    N = _get(dom, "N", "domain.N", _int, 128)
    d = _get(dom, "d", "domain.d", _int, 1)
    try:
        build_grid(L, N, d)
    except ValueError as exc:
        raise ConfigError(str(exc), "domain") from None

    ini = sec("initial")
    kind = ini.get("kind", "uniform").strip()
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"unknown initial density {kind!r}; choose from {INITIAL_KINDS}", "initial.kind")
    params = {}
    for k, v in ini.items():
        if k in ("kind", "zero_cell"):
            continue
        params[k] = v.strip() if k == "path" else _value(v, f"initial.{k}")
    initial = InitialSpec(kind, tuple(sorted(params.items())), _get(ini, "zero_cell", "initial.zero_cell", _opt_int, None))

    _check_known(cp, "potentials", ("v1", "v2", "v1_modulation"))
    pot = sec("potentials")
    V1 = parse_kernel(pot.get("V1", "zero"), "potentials.V1")
    if "V1_modulation" in pot:
        mp = _params(pot["V1_modulation"], "potentials.V1_modulation")
        V1 = V1.with_modulation(TimeModulation(mp.get("eps", 0.0), mp.get("omega", 1.0)))
    V2 = parse_kernel(pot.get("V2", "zero"), "potentials.V2")
    if V2.kind in ("harmonic", "double_well"):
        raise ConfigError(f"{V2.kind} is not a bounded two-body potential", "potentials.V2")
    _check_known(cp, "hi", ("z1", "z2"))
    hi = sec("hi")
    Z1 = parse_tensor(hi.get("Z1", "zero"), "hi.Z1")
    Z2 = parse_tensor(hi.get("Z2", "zero"), "hi.Z2")
    if d == 2 and Z1.structure == "dyadic":
        raise ConfigError("two-dimensional runs need an isotropic Z1", "hi.Z1")

    extra = ("t_end", "record_every", "snapshot_every", "spectral_every", "rate")
    _check_known(cp, "stepping", tuple(_STEP_KEYS) + extra)
    st = sec("stepping")
    convert = {"float": _number, "int": _int, "bool": _bool, "str": lambda v, k: v.strip()}
    kw = {f.name: convert[f.type](st[f.name], f"stepping.{f.name}") for f in fields(StepControl) if f.name in st}
    try:
        control = StepControl(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), "stepping") from None
    stepping = SteppingOptions(
        control,
        _get(st, "t_end", "stepping.t_end", _number, 0.1),
        _get(st, "record_every", "stepping.record_every", _int, 1),
        _get(st, "snapshot_every", "stepping.snapshot_every", _opt_int, None),
        _get(st, "spectral_every", "stepping.spectral_every", _opt_int, None),
        _get(st, "rate", "stepping.rate", _bool, False),
    )
    if stepping.t_end < 0:
        raise ConfigError("must be nonnegative", "stepping.t_end")
    if stepping.record_every < 1:
        raise ConfigError("must be at least 1", "stepping.record_every")

    _check_known(cp, "equilibrium", ("damping", "tol", "max_iter", "reference"))
    eq = sec("equilibrium")
    equilibrium = EquilibriumOptions(
        _get(eq, "damping", "equilibrium.damping", _number, 1.0),
        _get(eq, "tol", "equilibrium.tol", _number, 1e-12),
        _get(eq, "max_iter", "equilibrium.max_iter", _int, 500),
        _get(eq, "reference", "equilibrium.reference", _bool, True),
    )
    if not 0 < equilibrium.damping <= 1:
        raise ConfigError("must lie in (0, 1]", "equilibrium.damping")

    _check_known(cp, "particles", [f.name.lower() for f in fields(ParticleOptions)])
    pa = sec("particles")
    particles = ParticleOptions(
        _get(pa, "N", "particles.N", _int, 1000),
        _get(pa, "dt", "particles.dt", _number, 1e-4),
        _get(pa, "steps", "particles.steps", _int, 10000),
        _get(pa, "thin", "particles.thin", _int, 100),
        _get(pa, "burn_in", "particles.burn_in", _int, 0),
        _get(pa, "bins", "particles.bins", _int, 512),
        pa.get("pair_method", "auto").strip(),
        pa.get("compare", None),
    )
    if particles.pair_method not in ("auto", "exact", "binned"):
        raise ConfigError(f"unknown pair method {particles.pair_method!r}", "particles.pair_method")

    _check_known(cp, "output", ("directory",))
    _check_known(cp, "run", ("seed",))
    output = sec("output").get("directory", "out")
    seed = _get(sec("run"), "seed", "run.seed", _int, 0)
    return RunConfig(L, N, d, initial, ModelSpecs(V1, V2, Z1, Z2), stepping, equilibrium, particles, output, seed)


def _parser() -> configparser.ConfigParser:
    # option names are matched case-insensitively
    return configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))


def parse_text(text: str) -> RunConfig:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    return from_parser(cp)


def parse_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
        raise ConfigError("JSON config must map section names to objects")
    cp = _parser()
    cp.read_dict({s: {k: _to_text(v) for k, v in body.items()} for s, body in data.items()})
    return from_parser(cp)


def _to_text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ";".join(repr(float(x)) for x in v)
    if v is None:
        return "none"
    return str(v)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    if path.suffix.lower() == ".json":
        try:
            return parse_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", str(path)) from None
    return parse_text(text)


def _num(x) -> str:
    if isinstance(x, tuple):
        return ";".join(repr(float(v)) for v in x)
    return repr(float(x)) if isinstance(x, float) else str(x)


def to_sections(cfg: RunConfig) -> dict:
    """Canonical echo of a config; parses back to an identical :class:`RunConfig`."""
    s = cfg.specs
    pot = {"V1": s.V1.to_string(), "V2": s.V2.to_string()}
    if s.V1.modulation is not None:
        pot["V1_modulation"] = f"eps={s.V1.modulation.eps!r},omega={s.V1.modulation.omega!r}"
    initial = {"kind": cfg.initial.kind}
    for k, v in cfg.initial.params:
        initial[k] = v if k == "path" else _num(v)
    if cfg.initial.zero_cell is not None:
        initial["zero_cell"] = str(cfg.initial.zero_cell)
    c = cfg.stepping.control
    stepping = {f.name: _to_text(getattr(c, f.name)) if isinstance(getattr(c, f.name), bool) else _num(getattr(c, f.name)) for f in fields(StepControl)}
    stepping.update(
        t_end=_num(cfg.stepping.t_end),
        record_every=str(cfg.stepping.record_every),
        snapshot_every=_to_text(cfg.stepping.snapshot_every),
        spectral_every=_to_text(cfg.stepping.spectral_every),
        rate=_to_text(cfg.stepping.rate),
    )
    e = cfg.equilibrium
    p = cfg.particles
    particles = {f.name: _num(getattr(p, f.name)) for f in fields(ParticleOptions) if f.name != "compare"}
    if p.compare is not None:
        particles["compare"] = p.compare
    return {
        "domain": {"L": _num(cfg.L), "N": str(cfg.N), "d": str(cfg.d)},
        "initial": initial,
        "potentials": pot,
        "hi": {"Z1": s.Z1.to_string(), "Z2": s.Z2.to_string()},
        "stepping": stepping,
        "equilibrium": {
            "damping": _num(e.damping),
            "tol": _num(e.tol),
            "max_iter": str(e.max_iter),
            "reference": _to_text(e.reference),
        },
        "particles": particles,
        "output": {"directory": cfg.output},
        "run": {"seed": str(cfg.seed)},
    }


def to_text(cfg: RunConfig) -> str:
    lines = []
    for name, body in to_sections(cfg).items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in body.items()]
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    """Git blob hash of the canonical config text."""
    data = to_text(cfg).encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    from dataclasses import replace

    return replace(cfg, seed=int(seed))


def _axis_values(v, d, key):
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.size == 1:
        return np.full(d, arr[0])
    if arr.size != d:
        raise ConfigError(f"expected {d} components", key)
    return arr


def initial_density(cfg: RunConfig, base: Path | None = None) -> np.ndarray:
    """Build the initial density on the config's grid, normalized to unit mass."""
    g = cfg.grid
    p = cfg.initial.p
    x = g.points
    kind = cfg.initial.kind
    if kind == "uniform":
        rho = np.ones(g.shape)
    elif kind == "gaussian":
        c = _axis_values(p.get("center", 0.5 * g.L), g.d, "initial.center")
        w = p.get("width", 0.1 * g.L)
        if not w > 0:
            raise ConfigError("must be positive", "initial.width")
        rho = np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * w**2))
    elif kind == "mixture":
        cs = np.atleast_1d(p.get("centers", (0.3 * g.L, 0.7 * g.L)))
        ws = np.atleast_1d(p.get("widths", 0.1 * g.L)) * np.ones(len(cs))
        wts = np.atleast_1d(p.get("weights", 1.0)) * np.ones(len(cs))
        if np.any(ws <= 0) or np.any(wts < 0):
            raise ConfigError("widths must be positive and weights nonnegative", "initial")
        rho = np.zeros(g.shape)
        for c, w, a in zip(cs, ws, wts):
            bump = np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * w**2))
            rho += a * bump / (bump.sum() * g.cell_volume)
    elif kind == "cosine":
        amp = p.get("amplitude", 0.1)
        mode = p.get("mode", 1.0)
        if abs(amp) >= 1:
            raise ConfigError("amplitude must be below 1 for a positive density", "initial.amplitude")
        rho = 1.0 + amp * np.prod(np.cos(mode * np.pi * x / g.L), axis=-1)
    else:
        from .diagnostics import read_field_csv

        if "path" not in p:
            raise ConfigError("file initial density needs a path", "initial.path")
        path = Path(p["path"])
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            rho = read_field_csv(path, g)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc), "initial.path") from None
        if rho.min() < 0:
            raise ConfigError("initial density from file is negative", "initial.path")
        mass = integrate(g, rho)
        if abs(mass - 1) > 1e-6:
            raise ConfigError(f"initial density from file has mass {mass:.9g}, expected 1", "initial.path")
    if cfg.initial.zero_cell is not None:
        if not 0 <= cfg.initial.zero_cell < g.n_cells:
            raise ConfigError("cell index out of range", "initial.zero_cell")
        rho = rho.copy()
        rho.reshape(-1)[cfg.initial.zero_cell] = 0.0
    mass = integrate(g, rho)
    if not mass > 0:
        raise ConfigError("initial density has no mass", "initial")
    if kind != "file" or cfg.initial.zero_cell is not None:
        rho = rho / mass
    return rho
