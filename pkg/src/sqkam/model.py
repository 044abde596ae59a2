"""Polynomial models: Hamiltonians or vector fields in (x, p_x, y, p_y)."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .polyalg import (TruncPoly, layout, partial_derivative, real_variable_polys,
                      substitute)

log = logging.getLogger(__name__)

REAL_NAMES = ("x", "px", "y", "py")


class ModelError(ValueError):
    pass


class InfeasibleEnergyError(ValueError):
    pass


def _compile(polys: list[TruncPoly], name: str):
    """Turn real-coefficient polynomials into a fast python callable of a state
    array (leading axis = variable) returning a tuple of values."""
    lines = [f"def {name}(s):", "    x, px, y, py = s[0], s[1], s[2], s[3]"]
    outs = []
    for k, p in enumerate(polys):
        terms = []
        for e, c in p.terms():
            if abs(c.imag) > 1e-14 * max(1.0, abs(c.real)):
                raise ModelError("real-variable polynomial has complex coefficients")
            factors = [repr(float(c.real))]
            for v, pw in enumerate(e):
                factors += [REAL_NAMES[v]] * int(pw)
            terms.append("*".join(factors))
        const = p.coefficient((0, 0, 0, 0)) if p.layout.include_constant else 0
        expr = " + ".join(terms) if terms else "0.0*x"
        if const:
            expr = f"({expr}) + 0.0*x"
        lines.append(f"    o{k} = {expr}")
        outs.append(f"o{k}")
    lines.append(f"    return ({', '.join(outs)},)")
    ns: dict = {}
    exec("\n".join(lines), ns)  # noqa: S102 - source generated from numeric terms only
    return ns[name]


@dataclass
class ModelSpec:
    """A 2-DOF polynomial model.

    ``real_field`` holds (xdot, pxdot, ydot, pydot) as polynomials in the real
    variables (layout with constant); ``resonance_field`` holds the same dynamics in the
    resonance variables (z_x, z_x*, z_y, z_y*).
    """

    name: str
    real_field: list[TruncPoly]
    hamiltonian: TruncPoly | None = None
    n_dof: int = 2
    resonance_field: list[TruncPoly] = field(default_factory=list, init=False)
    mu_x: float = field(default=float("nan"), init=False)
    mu_y: float = field(default=float("nan"), init=False)

    def __post_init__(self):
        deg = max(max(p.degree(), 1) for p in self.real_field)
        self.degree = deg
        zlay = layout(4, deg, True)
        x, px, y, py = real_variable_polys(zlay)
        sub = [x, px, y, py]
        xd, pxd, yd, pyd = (substitute(p.with_layout(layout(4, deg, True)), sub, zlay)
                            for p in self.real_field)
        zfield = [xd - 1j * pxd, xd + 1j * pxd, yd - 1j * pyd, yd + 1j * pyd]
        for k, f in enumerate(zfield):
            if abs(f.coefficient((0, 0, 0, 0))) > 1e-14:
                raise ModelError(
                    f"vector field has a constant term in component {k}; "
                    "the origin must be a fixed point")
        self.resonance_field = zfield
        mus = []
        for k in range(4):
            lin = np.array([zfield[k].coefficient(_unit(j)) for j in range(4)])
            off = np.delete(lin, k)
            if np.any(np.abs(off) > 1e-12):
                raise ModelError(
                    "linear part is not diagonal in the resonance variables; "
                    "bring the model to normal linear form first")
            mus.append(lin[k] / 1j)
        if abs(mus[0].imag) > 1e-12 or abs(mus[2].imag) > 1e-12:
            raise ModelError("linear frequencies must be real (elliptic fixed point)")
        self.mu_x = float(mus[0].real)
        self.mu_y = float(mus[2].real)
        self._rhs = _compile([p.with_layout(layout(4, deg, True)) for p in self.real_field], "rhs")
        self._energy = (_compile([self.hamiltonian.with_layout(layout(4, max(self.hamiltonian.degree(), 1), True))], "energy")
                        if self.hamiltonian is not None else None)

    # real-variable evaluation -----------------------------------------
    def rhs(self, state):
        """Time derivative of (x, p_x, y, p_y); state may be (4,) or (4, ...)."""
        s = np.asarray(state, dtype=float)
        return np.array(self._rhs(s))

    def energy(self, state):
        if self._energy is None:
            raise ModelError(f"model {self.name!r} has no Hamiltonian")
        s = np.asarray(state, dtype=float)
        return self._energy(s)[0]

    def field_in(self, n_s: int) -> list[TruncPoly]:
        """Resonance-variable field in the constant-free basis of order n_s."""
        lay = layout(4, n_s)
        return [f.with_layout(lay) for f in self.resonance_field]

    @property
    def resonant(self) -> bool:
        return math.isclose(self.mu_x, self.mu_y, rel_tol=0, abs_tol=1e-12)


def _unit(j):
    e = [0, 0, 0, 0]
    e[j] = 1
    return tuple(e)


def from_hamiltonian(terms, name: str = "custom") -> ModelSpec:
    """Model from ``[(exponents over (x, px, y, py), coefficient), ...]``."""
    terms = [(tuple(int(k) for k in e), float(c)) for e, c in terms]
    deg = max(sum(e) for e, _ in terms)
    lay = layout(4, max(deg, 2), True)
    kept = []
    for e, c in terms:
        if sum(e) == 0:
            warnings.warn("dropping constant term of the Hamiltonian", stacklevel=2)
            continue
        kept.append((e, c))
    H = TruncPoly.from_terms(lay, kept)
    for e, c in H.terms():
        if sum(e) == 1:
            raise ModelError("Hamiltonian has linear terms; origin is not a fixed point")
    dHdx, dHdpx, dHdy, dHdpy = (partial_derivative(H, k) for k in range(4))
    real_field = [dHdpx, -dHdx, dHdpy, -dHdy]
    return ModelSpec(name=name, real_field=real_field, hamiltonian=H)


def from_vector_field(components, name: str = "custom") -> ModelSpec:
    """Model from four lists of ``(exponents, coefficient)`` giving
    (xdot, pxdot, ydot, pydot)."""
    if len(components) != 4:
        raise ModelError("vector field needs 4 components")
    deg = max([sum(e) for comp in components for e, _ in comp] + [1])
    lay = layout(4, deg, True)
    real_field = [TruncPoly.from_terms(lay, [(tuple(e), float(c)) for e, c in comp])
                  for comp in components]
    return ModelSpec(name=name, real_field=real_field)


HENON_HEILES_TERMS = [
    ((2, 0, 0, 0), 0.5), ((0, 2, 0, 0), 0.5), ((0, 0, 2, 0), 0.5), ((0, 0, 0, 2), 0.5),
    ((2, 0, 1, 0), 1.0), ((0, 0, 3, 0), -1.0 / 3.0),
]


def henon_heiles() -> ModelSpec:
    """H = (x^2 + p_x^2 + y^2 + p_y^2)/2 + x^2 y - y^3/3."""
    return from_hamiltonian(HENON_HEILES_TERMS, name="henon-heiles")


BUILTIN_MODELS = {"henon-heiles": henon_heiles}


def load_model(source) -> ModelSpec:
    """Built-in name, or a JSON/TOML file with ``hamiltonian`` or ``vector_field``.

    File schema::

        {"name": "...", "variables": ["x", "px", "y", "py"],
         "hamiltonian": [{"exponents": [2, 0, 0, 0], "coefficient": 0.5}, ...]}

    or ``"vector_field": {"x": [...], "px": [...], "y": [...], "py": [...]}``
    with the same term objects.
    """
    if isinstance(source, str) and source in BUILTIN_MODELS:
        return BUILTIN_MODELS[source]()
    path = Path(source)
    if not path.exists():
        raise ModelError(f"unknown model {source!r} (not built in, no such file)")
    data = _read_structured(path)
    return model_from_dict(data, default_name=path.stem)


def _read_structured(path: Path) -> dict:
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib  # type: ignore[no-redef]
        return tomllib.loads(text)
    return json.loads(text)


def _terms(items, where):
    out = []
    for k, it in enumerate(items):
        try:
            e = [int(v) for v in it["exponents"]]
            c = float(it["coefficient"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"{where}[{k}]: need integer 'exponents' and numeric 'coefficient'") from exc
        if len(e) != 4 or min(e) < 0:
            raise ModelError(f"{where}[{k}].exponents must be 4 non-negative integers")
        out.append((tuple(e), c))
    return out


def model_from_dict(data: dict, default_name: str = "custom") -> ModelSpec:
    name = data.get("name", default_name)
    variables = data.get("variables", list(REAL_NAMES))
    if list(variables) != list(REAL_NAMES):
        raise ModelError(f"variables must be {list(REAL_NAMES)}, got {variables}")
    if "hamiltonian" in data:
        return from_hamiltonian(_terms(data["hamiltonian"], "hamiltonian"), name=name)
    if "vector_field" in data:
        vf = data["vector_field"]
        comps = [_terms(vf.get(v, []), f"vector_field.{v}") for v in REAL_NAMES]
        return from_vector_field(comps, name=name)
    raise ModelError("model needs a 'hamiltonian' or a 'vector_field' entry")


def initial_state(E: float, x0: float, y0: float, py0: float, model: ModelSpec | None = None):
    """State (x0, p_x0, y0, p_y0) on the energy surface H = E with p_x0 >= 0.

    For the Henon-Heiles model p_x0 = sqrt(2E - x0^2 - y0^2 - p_y0^2 - 2 x0^2 y0 + 2 y0^3/3);
    other Hamiltonians are solved numerically for the positive root.
    """
    if model is None or model.name == "henon-heiles":
        rad = 2 * E - x0**2 - y0**2 - py0**2 - 2 * x0**2 * y0 + (2.0 / 3.0) * y0**3
        if rad < 0:
            raise InfeasibleEnergyError(
                f"no real p_x0 at E={E} for (x0, y0, py0)=({x0}, {y0}, {py0}); radicand {rad:.3e}")
        return np.array([x0, math.sqrt(rad), y0, py0])
    from scipy.optimize import brentq

    def f(px):
        return model.energy(np.array([x0, px, y0, py0])) - E

    if f(0.0) > 0:
        raise InfeasibleEnergyError(f"H at p_x=0 already exceeds E={E}")
    hi = 1.0
    while f(hi) < 0:
        hi *= 2
        if hi > 1e6:
            raise InfeasibleEnergyError("could not bracket p_x0")
    return np.array([x0, brentq(f, 0.0, hi, xtol=1e-15, rtol=1e-15), y0, py0])
