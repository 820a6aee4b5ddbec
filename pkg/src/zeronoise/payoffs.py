"""Bounded payoff functions f: R^n -> R used as initial data and test functions."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError


def as_points(x, n=None):
    """Return ``x`` as a float array of shape ``(P, n)``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if (n is None or n == 1) else arr.reshape(1, -1)
    if n is not None and arr.shape[-1] != n:
        raise DomainError(f"expected points of dimension {n}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Payoff:
    """A vectorised bounded function with a declared sup-norm bound.

    ``fn`` maps an ``(P, n)`` array of points to ``(P,)`` values.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    sup: float
    tag: str = "custom"
    lipschitz: float = float("nan")

    def __call__(self, x):
        pts = as_points(x)
        return np.asarray(self.fn(pts), dtype=float).reshape(pts.shape[0])

    def __add__(self, other):
        return Payoff(lambda x: self.fn(x) + other.fn(x), self.sup + other.sup,
                      f"({self.tag}+{other.tag})", self.lipschitz + other.lipschitz)

    def scaled(self, a):
        return Payoff(lambda x: a * self.fn(x), abs(a) * self.sup, f"{a!r}*{self.tag}",
                      abs(a) * self.lipschitz)

    def shifted(self, c):
        return Payoff(lambda x: self.fn(x) + c, self.sup + abs(c), f"({self.tag}+{c!r})",
                      self.lipschitz)


def constant(c):
    return Payoff(lambda x: np.full(x.shape[0], float(c)), abs(float(c)), f"const({c!r})", 0.0)


def tanh():
    return Payoff(lambda x: np.tanh(x[:, 0]), 1.0, "tanh", 1.0)


def gaussian():
    """exp(-|x|^2)."""
    return Payoff(lambda x: np.exp(-np.sum(x * x, axis=1)), 1.0, "gaussian",
                  float(np.sqrt(2.0) * np.exp(-0.5)))


def sine():
    return Payoff(lambda x: np.sin(x[:, 0]), 1.0, "sin", 1.0)


def cosine():
    return Payoff(lambda x: np.cos(x[:, 0]), 1.0, "cos", 1.0)


def arctan_scaled():
    return Payoff(lambda x: (2.0 / np.pi) * np.arctan(x[:, 0]), 1.0, "arctan", 2.0 / np.pi)


def smooth_step(width=0.1):
    """Logistic step of the given width; a smoothed indicator of x > 0."""
    return Payoff(lambda x: 0.5 * (1.0 + np.tanh(x[:, 0] / width)), 1.0, f"step({width!r})",
                  0.5 / width)


def sin_square():
    """sin(|x|^2): bounded and continuous but not uniformly continuous."""
    return Payoff(lambda x: np.sin(np.sum(x * x, axis=1)), 1.0, "sin_sq")


def sin_square_mollified(s):
    """Gaussian mollification of sin(x^2) (n = 1) at scale ``s``, in closed form.

    E[sin((x + sZ)^2)] = Im[(1 - 2is^2)^(-1/2) exp(i x^2 / (1 - 2is^2))].
    """
    if s < 0:
        raise DomainError("mollifier scale must be nonnegative")
    z = 1.0 - 2.0j * s * s

    def fn(x):
        return np.imag(np.exp(1j * x[:, 0] ** 2 / z) / np.sqrt(z))

    return Payoff(fn, 1.0, f"sin_sq_moll({s!r})")


BUILTIN = {
    "tanh": tanh,
    "gaussian": gaussian,
    "sin": sine,
    "cos": cosine,
    "arctan": arctan_scaled,
    "step": smooth_step,
    "one": lambda: constant(1.0),
    "zero": lambda: constant(0.0),
    "sin_sq": sin_square,
}


def by_tag(tag):
    try:
        return BUILTIN[tag]()
    except KeyError:
        raise DomainError(f"unknown payoff tag {tag!r}") from None
