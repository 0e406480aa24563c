"""Uniformly convex interaction potentials.

A potential is the triple (V, V', V'') with certified ellipticity constants
c- <= V'' <= c+.  Three families cover the experiments: the exactly solvable
quadratic, a smooth non-quadratic perturbation, and a potential whose second
derivative jumps, which exercises the mollification machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Potential:
    name: str
    v: Callable[[np.ndarray], np.ndarray]
    vp: Callable[[np.ndarray], np.ndarray]
    vpp: Callable[[np.ndarray], np.ndarray]
    c_minus: float
    c_plus: float
    symmetric: bool = True
    params: dict = field(default_factory=dict)

    def spot_check(self, lo: float = -10.0, hi: float = 10.0, n: int = 2001) -> None:
        """Assert the certified ellipticity window on a grid."""
        x = np.linspace(lo, hi, n)
        w = self.vpp(x)
        if w.min() < self.c_minus - 1e-9 or w.max() > self.c_plus + 1e-9:
            raise AssertionError(
                f"{self.name}: V'' leaves [{self.c_minus}, {self.c_plus}] "
                f"(observed [{w.min()}, {w.max()}])"
            )


def quadratic() -> Potential:
    """V(x) = x^2/2: the Gaussian case, exactly solvable by Fourier modes."""
    return Potential(
        name="quadratic",
        v=lambda x: 0.5 * np.square(x),
        vp=lambda x: np.asarray(x, dtype=np.float64),
        vpp=lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
        c_minus=1.0,
        c_plus=1.0,
    )


def soft_quartic(a: float) -> Potential:
    """V(x) = x^2/2 + a*sqrt(1+x^2): smooth, uniformly convex, non-quadratic."""
    if a <= 0:
        raise ValueError(f"strength must be positive, got {a}")

    def v(x):
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * x * x + a * np.sqrt(1.0 + x * x)

    def vp(x):
        x = np.asarray(x, dtype=np.float64)
        return x + a * x / np.sqrt(1.0 + x * x)

    def vpp(x):
        x = np.asarray(x, dtype=np.float64)
        return 1.0 + a * (1.0 + x * x) ** -1.5

    return Potential("soft_quartic", v, vp, vpp, c_minus=1.0, c_plus=1.0 + a,
                     params={"a": a})


def kinked(b: float) -> Potential:
    """C^{1,1} potential with V''(x) = 1 + b on |x| < 1 and 1 outside.

    V' is the continuous piecewise-linear antiderivative, V its C^{1,1}
    antiderivative; the jump of V'' at |x| = 1 drives the Lusin-set and
    linearization-modulus experiments.
    """
    if not 0.0 < b < 1.0:
        raise ValueError(f"kink size must lie in (0, 1), got {b}")

    def v(x):
        x = np.asarray(x, dtype=np.float64)
        ax = np.abs(x)
        inner = 0.5 * (1.0 + b) * x * x
        outer = 0.5 * x * x + b * (ax - 0.5)
        return np.where(ax <= 1.0, inner, outer)

    def vp(x):
        x = np.asarray(x, dtype=np.float64)
        return x + b * np.clip(x, -1.0, 1.0)

    def vpp(x):
        x = np.asarray(x, dtype=np.float64)
        return 1.0 + b * (np.abs(x) < 1.0)

    return Potential("kinked", v, vp, vpp, c_minus=1.0, c_plus=1.0 + b,
                     params={"b": b})


# fixed 64-point Gauss-Legendre rule on [-1, 1] against the bump weight
_QUAD_NODES, _QUAD_GL_W = np.polynomial.legendre.leggauss(64)
_BUMP = np.exp(-1.0 / (1.0 - _QUAD_NODES**2))
_QUAD_W = _QUAD_GL_W * _BUMP
_QUAD_W = _QUAD_W / _QUAD_W.sum()  # normalizer folded in: weights sum to 1


def mollify(V: Potential, kappa: float) -> Potential:
    """Convolution with the standard compactly supported bump at width kappa.

    All three evaluators are convolved with the same fixed 64-node
    quadrature; since the weights sum to one, mollification is exact on
    constants and on any region where the integrand is constant.
    """
    if kappa <= 0:
        raise ValueError(f"mollification width must be positive, got {kappa}")

    def conv(f):
        def g(x):
            x = np.asarray(x, dtype=np.float64)
            vals = f(x[..., None] - kappa * _QUAD_NODES)
            out = vals @ _QUAD_W
            if not np.all(np.isfinite(out)):
                raise FloatingPointError("mollification quadrature produced non-finite values")
            return out

        return g

    return Potential(
        name=f"{V.name}_mollified",
        v=conv(V.v),
        vp=conv(V.vp),
        vpp=conv(V.vpp),
        c_minus=V.c_minus,
        c_plus=V.c_plus,
        symmetric=V.symmetric,
        params={**V.params, "kappa": kappa},
    )


def lusin_measure(V: Potential, S: float, kappa: float, eps: float,
                  resolution: float = 1e-4) -> float:
    """Lebesgue measure of {x in [-S, S] : |V''(x) - V_kappa''(x)| >= eps}.

    Evaluated by quadrature of the indicator on a uniform grid at the given
    resolution, refined adaptively near indicator transitions.
    """
    if S < 1:
        raise ValueError("window must satisfy S >= 1")
    if not 0 < eps <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    Vk = mollify(V, kappa)

    def indicator(x):
        return np.abs(V.vpp(x) - Vk.vpp(x)) >= eps

    # coarse pass
    n = int(np.ceil(2 * S / (8 * resolution))) + 1
    x = np.linspace(-S, S, n)
    h = x[1] - x[0]
    ind = indicator(x)
    measure = 0.0
    # refine every coarse interval that is inside or touches the set
    active = ind[:-1] | ind[1:]
    for i in np.nonzero(active)[0]:
        xs = np.linspace(x[i], x[i + 1], max(int(np.ceil(h / resolution)), 2) + 1)
        fine = indicator(xs)
        measure += (fine[:-1] & fine[1:]).sum() * (xs[1] - xs[0])
        # half-credit for transition cells keeps the error below resolution
        measure += 0.5 * (fine[:-1] ^ fine[1:]).sum() * (xs[1] - xs[0])
    return float(measure)


def from_config(spec: dict) -> Potential:
    """Potential from a config block like {"kind": "soft_quartic", "a": 0.5}."""
    kind = spec.get("kind")
    if kind == "quadratic":
        return quadratic()
    if kind == "soft_quartic":
        return soft_quartic(float(spec["a"]))
    if kind == "kinked":
        return kinked(float(spec["b"]))
    raise ValueError(f"unknown potential kind: {kind!r}")
