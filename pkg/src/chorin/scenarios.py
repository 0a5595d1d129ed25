"""Continuum initial data and forcing built from small JSON-style descriptors.

initial: {"kind": "zero"} | {"kind": "random", "amplitude": a, "seed": s}
         | {"kind": "manufactured", "name": n}
forcing: {"kind": "zero"} | {"kind": "periodic", "amplitude": a, "seed": s}
         | {"kind": "manufactured", "name": n}
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError

_KEYS = {
    "zero": set(),
    "random": {"amplitude", "seed", "modes"},
    "periodic": {"amplitude", "seed", "modes"},
    "manufactured": {"name"},
}


class RandomModes:
    """Smooth random vector field: sum of `modes` plane waves with random phases.

    Wave numbers are integer multiples of 2 pi / period, so the field is
    periodic on the unit torus.
    """

    def __init__(self, seed=0, modes=6, max_wave=2, period=1.0):
        rng = np.random.default_rng(seed)
        self.k = 2 * np.pi / period * rng.integers(-max_wave, max_wave + 1, size=(modes, 3))
        self.phase = rng.uniform(0, 2 * np.pi, size=modes)
        self.amp = rng.standard_normal((modes, 3)) / np.sqrt(modes)

    def __call__(self, pts):
        waves = np.sin(np.asarray(pts, dtype=float) @ self.k.T + self.phase)
        return waves @ self.amp


def _check_keys(desc, what):
    if not isinstance(desc, dict) or "kind" not in desc:
        raise ConfigError(f"{what}: expected an object with a 'kind' key")
    kind = desc["kind"]
    if kind not in _KEYS or (what == "initial" and kind == "periodic") \
            or (what == "forcing" and kind == "random"):
        raise ConfigError(f"{what}.kind: unknown kind {kind!r}")
    extra = set(desc) - {"kind"} - _KEYS[kind]
    if extra:
        raise ConfigError(f"{what}.{sorted(extra)[0]}: unknown key")
    return kind


def make_initial(desc, domain=None):
    """v0(points) for a descriptor, or None for zero data."""
    kind = _check_keys(desc, "initial")
    if kind == "zero":
        return None
    if kind == "random":
        field = RandomModes(int(desc.get("seed", 0)), int(desc.get("modes", 6)))
        amp = float(desc.get("amplitude", 1.0))
        return lambda pts: amp * field(pts)
    from .harness import get_solution
    try:
        return get_solution(desc.get("name", "")).initial
    except KeyError as exc:
        raise ConfigError(f"initial.name: {exc.args[0]}") from None


def periodic_field(amplitude=1.0, seed=0, modes=6):
    """f(t, x) = amplitude (cos(2 pi t) F1(x) + sin(2 pi t) F2(x)), period 1 in t."""
    f1 = RandomModes(seed, modes)
    f2 = RandomModes(seed + 1, modes)

    def f(t, pts):
        return amplitude * (np.cos(2 * np.pi * t) * f1(pts) + np.sin(2 * np.pi * t) * f2(pts))

    return f


def make_forcing(desc, domain=None, nu=1.0):
    """f(t, points) for a descriptor, or None for zero forcing."""
    kind = _check_keys(desc, "forcing")
    if kind == "zero":
        return None
    if kind == "periodic":
        return periodic_field(float(desc.get("amplitude", 1.0)), int(desc.get("seed", 0)),
                              int(desc.get("modes", 6)))
    from .harness import forcing_from_solution, get_solution
    try:
        ms = get_solution(desc.get("name", ""))
    except KeyError as exc:
        raise ConfigError(f"forcing.name: {exc.args[0]}") from None
    return forcing_from_solution(ms, nu)
