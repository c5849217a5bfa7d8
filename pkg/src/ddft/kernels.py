"""Potentials and hydrodynamic-interaction kernels.

Scalar kernels (:class:`KernelSpec`) serve as the one-body potential V1, the
two-body potential V2, and as radial profiles of the tensor kernels
(:class:`TensorKernelSpec`) Z1 and Z2. All families are bounded with bounded
first and second derivatives on bounded sets.

Positions are arrays whose last axis is the spatial dimension; a bare float is
read as a one-dimensional position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

# required and optional parameters per kind
_KINDS = {
    "zero": ((), {}),
    "constant": (("c",), {}),
    "harmonic": (("stiffness",), {"center": 0.0}),
    "gaussian": (("amplitude", "width"), {"center": 0.0}),
    "soft_core": (("amplitude", "width"), {}),
    "double_well": (("a", "b"), {"center": 0.0}),
    "tabulated": (("points", "values"), {"center": 0.0, "radial": 1.0}),
}


@dataclass(frozen=True)
class TimeModulation:
    """Multiplier ``1 + eps * sin(omega * t)`` applied to a one-body potential."""

    eps: float = 0.0
    omega: float = 1.0

    def __call__(self, t: float) -> float:
        return 1.0 + self.eps * math.sin(self.omega * t)


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    params: tuple = ()
    modulation: TimeModulation | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; known: {sorted(_KINDS)}")
        required, optional = _KINDS[self.kind]
        given = dict(self.params)
        missing = [p for p in required if p not in given]
        if missing:
            raise ValueError(f"{self.kind} kernel needs parameters {missing}")
        unknown = set(given) - set(required) - set(optional)
        if unknown:
            raise ValueError(f"{self.kind} kernel got unknown parameters {sorted(unknown)}")
        merged = {**optional, **given}
        normalized = []
        for k in sorted(merged):
            v = merged[k]
            if isinstance(v, (list, tuple, np.ndarray)):
                v = tuple(float(x) for x in np.ravel(v))
            else:
                v = float(v)
            normalized.append((k, v))
        object.__setattr__(self, "params", tuple(normalized))
        if self.kind in ("gaussian", "soft_core") and not self.p["width"] > 0:
            raise ValueError(f"{self.kind} width must be positive")
        if self.kind == "tabulated":
            pts, vals = self.p["points"], self.p["values"]
            if not isinstance(pts, tuple) or len(pts) < 4 or len(pts) != len(vals):
                raise ValueError("tabulated kernel needs matching points/values, at least 4 samples")
            if np.any(np.diff(pts) <= 0):
                raise ValueError("tabulated points must be strictly increasing")

    @property
    def p(self) -> dict:
        return dict(self.params)

    @cached_property
    def _spline(self):
        return CubicSpline(self.p["points"], self.p["values"])

    # convenience constructors
    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, c):
        return cls("constant", (("c", c),))

    @classmethod
    def harmonic(cls, stiffness, center=0.0, modulation=None):
        return cls("harmonic", (("stiffness", stiffness), ("center", center)), modulation)

    @classmethod
    def gaussian(cls, amplitude, width, center=0.0):
        return cls("gaussian", (("amplitude", amplitude), ("width", width), ("center", center)))

    @classmethod
    def soft_core(cls, amplitude, width):
        return cls("soft_core", (("amplitude", amplitude), ("width", width)))

    @classmethod
    def double_well(cls, a, b, center=0.0):
        return cls("double_well", (("a", a), ("b", b), ("center", center)))

    @classmethod
    def tabulated(cls, points, values, radial=True, center=0.0):
        return cls(
            "tabulated",
            (("points", tuple(points)), ("values", tuple(values)), ("radial", float(radial)), ("center", center)),
        )

    def with_modulation(self, modulation):
        return KernelSpec(self.kind, self.params, modulation)

    @property
    def is_static(self) -> bool:
        return self.modulation is None or self.modulation.eps == 0.0

    def to_string(self) -> str:
        parts = []
        for k, v in self.params:
            if isinstance(v, tuple):
                v = ";".join(repr(x) for x in v)
            else:
                v = repr(v)
            parts.append(f"{k}={v}")
        return self.kind + (":" + ",".join(parts) if parts else "")


@dataclass(frozen=True)
class TensorKernelSpec:
    """Symmetric d x d kernel built from a scalar radial profile.

    ``isotropic``: profile(r) I.
    ``dyadic``: profile(r) (c1 I + c2 r r^T / (|r|^2 + eps_reg^2)).
    """

    profile: KernelSpec = field(default_factory=KernelSpec.zero)
    structure: str = "isotropic"
    c1: float = 1.0
    c2: float = 0.0
    eps_reg: float = 0.0

    def __post_init__(self):
        if self.structure not in ("isotropic", "dyadic"):
            raise ValueError(f"unknown tensor structure {self.structure!r}")
        if self.structure == "dyadic" and not self.eps_reg > 0:
            raise ValueError("dyadic kernels need a positive regularization length eps_reg")
        if self.profile.kind == "harmonic" or self.profile.kind == "double_well":
            raise ValueError(f"{self.profile.kind} is not a bounded kernel profile")

    @classmethod
    def zero(cls):
        return cls(KernelSpec.zero())

    @classmethod
    def isotropic(cls, profile):
        return cls(profile)

    @classmethod
    def dyadic(cls, profile, c1, c2, eps_reg):
        return cls(profile, "dyadic", float(c1), float(c2), float(eps_reg))

    @property
    def is_zero(self) -> bool:
        return self.profile.kind == "zero" or (self.profile.kind == "constant" and self.profile.p["c"] == 0)

    def to_string(self) -> str:
        s = self.profile.to_string()
        if self.structure == "dyadic":
            s += f" @ dyadic:c1={self.c1!r},c2={self.c2!r},eps_reg={self.eps_reg!r}"
        return s


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(1) if x.ndim == 0 else x


def _modulation(spec: KernelSpec, t: float) -> float:
    return 1.0 if spec.modulation is None else spec.modulation(t)


def eval_potential(spec: KernelSpec, x, t: float = 0.0):
    x = _points(x)
    p = spec.p
    kind = spec.kind
    if kind == "zero":
        out = np.zeros(x.shape[:-1])
    elif kind == "constant":
        out = np.full(x.shape[:-1], p["c"])
    elif kind == "harmonic":
        out = 0.5 * p["stiffness"] * np.sum((x - p["center"]) ** 2, axis=-1)
    elif kind == "gaussian":
        r2 = np.sum((x - p["center"]) ** 2, axis=-1)
        out = p["amplitude"] * np.exp(-r2 / (2 * p["width"] ** 2))
    elif kind == "soft_core":
        r2 = np.sum(x**2, axis=-1)
        out = p["amplitude"] / (1.0 + r2 / p["width"] ** 2)
    elif kind == "double_well":
        s2 = np.sum((x - p["center"]) ** 2, axis=-1)
        out = p["a"] * s2**2 - p["b"] * s2
    else:
        s = _tabulated_argument(spec, x)
        out = spec._spline(s)
    out = out * _modulation(spec, t)
    return float(out) if out.ndim == 0 else out


def _tabulated_argument(spec: KernelSpec, x):
    p = spec.p
    if p["radial"]:
        s = np.sqrt(np.sum((x - p["center"]) ** 2, axis=-1))
    else:
        if x.shape[-1] != 1:
            raise ValueError("non-radial tabulated kernels are one-dimensional")
        s = x[..., 0] - p["center"]
    lo, hi = p["points"][0], p["points"][-1]
    slack = 1e-12 * max(1.0, abs(hi) + abs(lo))
    if np.any(s < lo - slack) or np.any(s > hi + slack):
        raise ValueError(f"tabulated kernel queried outside its sample range [{lo}, {hi}]")
    return np.clip(s, lo, hi)


def eval_gradient(spec: KernelSpec, x, t: float = 0.0) -> np.ndarray:
    x = _points(x)
    p = spec.p
    kind = spec.kind
    if kind in ("zero", "constant"):
        out = np.zeros(x.shape)
    elif kind == "harmonic":
        out = p["stiffness"] * (x - p["center"])
    elif kind == "gaussian":
        y = x - p["center"]
        r2 = np.sum(y**2, axis=-1, keepdims=True)
        out = -p["amplitude"] / p["width"] ** 2 * y * np.exp(-r2 / (2 * p["width"] ** 2))
    elif kind == "soft_core":
        r2 = np.sum(x**2, axis=-1, keepdims=True)
        w2 = p["width"] ** 2
        out = -2.0 * p["amplitude"] * x / (w2 * (1.0 + r2 / w2) ** 2)
    elif kind == "double_well":
        y = x - p["center"]
        s2 = np.sum(y**2, axis=-1, keepdims=True)
        out = (4 * p["a"] * s2 - 2 * p["b"]) * y
    else:
        s = _tabulated_argument(spec, x)
        ds = spec._spline(s, 1)
        if p["radial"]:
            y = x - p["center"]
            r = np.sqrt(np.sum(y**2, axis=-1))
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[..., None] > 0, y / r[..., None], 0.0)
            out = ds[..., None] * unit
        else:
            out = np.asarray(ds)[..., None]
    return out * _modulation(spec, t)


def eval_tensor(spec: TensorKernelSpec, r) -> np.ndarray:
    r = _points(r)
    d = r.shape[-1]
    prof = np.asarray(eval_potential(spec.profile, r))
    eye = np.eye(d)
    if spec.structure == "isotropic":
        return prof[..., None, None] * eye
    r2 = np.sum(r**2, axis=-1)[..., None, None]
    dyad = r[..., :, None] * r[..., None, :] / (r2 + spec.eps_reg**2)
    return prof[..., None, None] * (spec.c1 * eye + spec.c2 * dyad)


def _scan_points(L: float, d: int, lo: float, n: int = 2001) -> np.ndarray:
    axis = np.linspace(lo, L, n if d == 1 else 201)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


def sup_norm(spec, L: float | None = None, d: int = 1, box: str = "difference") -> float:
    """Supremum of |V| (or operator norm of Z) over the displacement box [-L, L]^d.

    ``box="domain"`` scans [0, L]^d instead, which is the relevant set for a
    one-body potential. Bounded families use closed forms and need no extent.
    """
    if isinstance(spec, TensorKernelSpec):
        base = sup_norm(spec.profile, L, d, box)
        if spec.structure == "isotropic":
            return base
        return base * max(1.0, abs(spec.c1) + abs(spec.c2))
    p = spec.p
    scale = 1.0 if spec.modulation is None else 1.0 + abs(spec.modulation.eps)
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "constant":
        return abs(p["c"]) * scale
    if spec.kind in ("gaussian", "soft_core"):
        return abs(p["amplitude"]) * scale
    if spec.kind == "tabulated":
        pts = np.asarray(p["points"])
        fine = np.linspace(pts[0], pts[-1], 10 * (len(pts) - 1) + 1)
        vals = spec._spline(fine)
        return float(np.max(np.abs(vals))) * scale
    if L is None:
        raise ValueError(f"sup norm of an unbounded {spec.kind} kernel needs the domain extent")
    pts = _scan_points(L, d, -L if box == "difference" else 0.0)
    return float(np.max(np.abs(eval_potential(spec, pts)))) * scale


def grad_sup_norm(spec: KernelSpec, L: float, d: int = 1, box: str = "difference") -> float:
    """Supremum of |grad V| over the displacement box (or the domain box)."""
    p = spec.p
    scale = 1.0 if spec.modulation is None else 1.0 + abs(spec.modulation.eps)
    if spec.kind in ("zero", "constant"):
        return 0.0
    if spec.kind == "gaussian" and (box == "difference" or p["center"] == 0.0):
        # peak of r exp(-r^2 / 2 sigma^2) at r = sigma, reachable when L >= sigma
        r = min(p["width"], L * math.sqrt(d) if box == "difference" else p["width"])
        return abs(p["amplitude"]) / p["width"] ** 2 * r * math.exp(-(r**2) / (2 * p["width"] ** 2)) * scale
    if spec.kind == "soft_core" and box == "difference":
        # peak of 2 a r / (w^2 (1 + r^2/w^2)^2) at r = w / sqrt(3)
        w = p["width"]
        r = min(w / math.sqrt(3), L * math.sqrt(d))
        return 2 * abs(p["amplitude"]) * r / (w**2 * (1 + r**2 / w**2) ** 2) * scale
    pts = _scan_points(L, d, -L if box == "difference" else 0.0)
    if spec.kind == "tabulated" and spec.p["radial"]:
        hi = spec.p["points"][-1]
        pts = pts[np.sqrt(np.sum((pts - spec.p["center"]) ** 2, axis=-1)) <= hi]
    g = eval_gradient(spec, pts)
    return float(np.max(np.sqrt(np.sum(g**2, axis=-1))))


@dataclass(frozen=True)
class ModelSpecs:
    """The four kernels defining a problem: V1, V2 and the two HI tensors."""

    V1: KernelSpec = field(default_factory=KernelSpec.zero)
    V2: KernelSpec = field(default_factory=KernelSpec.zero)
    Z1: TensorKernelSpec = field(default_factory=TensorKernelSpec.zero)
    Z2: TensorKernelSpec = field(default_factory=TensorKernelSpec.zero)

    @property
    def has_hi(self) -> bool:
        return not (self.Z1.is_zero and self.Z2.is_zero)

    def without_hi(self) -> "ModelSpecs":
        return ModelSpecs(self.V1, self.V2)
