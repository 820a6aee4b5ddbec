"""Classical (C^{1,2}) residual checks, the smoothed power supersolution psi_theta,
and the discrete comparison diagnostic."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coeffs import check_degenerate_point, check_exponents
from .errors import DomainError
from .payoffs import as_points

KINDS = ("supersolution_candidate", "subsolution_candidate")


def _times(t, P):
    return np.broadcast_to(np.asarray(t, dtype=float), (P,)).astype(float)


@dataclass(frozen=True)
class SmoothCandidate:
    """A C^{1,2} function w(x, t) with closed-form derivatives.

    Each map takes ``(x, t)`` with ``x`` of shape ``(P, n)`` and ``t`` of
    shape ``(P,)``; values and time derivatives are ``(P,)``, gradients
    ``(P, n)`` and Hessians ``(P, n, n)``.
    """

    value: Callable
    gradient: Callable
    hessian: Callable
    time_derivative: Callable
    kind: str = "supersolution_candidate"
    dim: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown candidate kind {self.kind!r}")

    def _eval(self, which, x, t):
        x = as_points(x, self.dim)
        return getattr(self, which)(x, _times(t, x.shape[0]))

    def __call__(self, x, t=0.0):
        return self._eval("value", x, t)

    def combine(self, other, a=1.0):
        """The candidate a * self + other."""
        if other.dim != self.dim:
            raise DomainError("candidates live in different dimensions")
        return SmoothCandidate(
            lambda x, t: a * self.value(x, t) + other.value(x, t),
            lambda x, t: a * self.gradient(x, t) + other.gradient(x, t),
            lambda x, t: a * self.hessian(x, t) + other.hessian(x, t),
            lambda x, t: a * self.time_derivative(x, t) + other.time_derivative(x, t),
            self.kind, self.dim)

    def __add__(self, other):
        return self.combine(other, 1.0)


def constant_candidate(c, dim=1, kind="supersolution_candidate"):
    return SmoothCandidate(lambda x, t: np.full(x.shape[0], float(c)),
                           lambda x, t: np.zeros_like(x),
                           lambda x, t: np.zeros((x.shape[0], dim, dim)),
                           lambda x, t: np.zeros(x.shape[0]), kind, dim)


def quadratic_candidate(Q, g, c0, ct, dim=None, kind="supersolution_candidate"):
    """w(x, t) = x^T Q x + g . x + c0 + ct t with symmetric Q."""
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    g = np.asarray(g, dtype=float)
    n = Q.shape[0] if dim is None else dim
    return SmoothCandidate(
        lambda x, t: np.einsum("pi,ij,pj->p", x, Q, x) + x @ g + c0 + ct * t,
        lambda x, t: 2.0 * x @ Q + g,
        lambda x, t: np.broadcast_to(2.0 * Q, (x.shape[0], n, n)).copy(),
        lambda x, t: np.full(x.shape[0], float(ct)), kind, n)


def make_psi(x_star, K=1.0, gamma=0.5, theta=0.0):
    """psi_theta(x) = K (|x - x*|^2 + theta)^(gamma/2) with exact derivatives.

    With ``theta = 0`` derivatives are refused at x*.
    """
    if not 0.0 < gamma < 1.0:
        raise DomainError("gamma must lie in (0, 1)")
    if K <= 0 or theta < 0:
        raise DomainError("need K > 0 and theta >= 0")
    xs = np.atleast_1d(np.asarray(x_star, dtype=float))
    n = xs.size

    def base(x):
        d = x - xs
        s = np.sum(d * d, axis=1) + theta
        return d, s

    def guard(s):
        if theta == 0 and np.any(s == 0):
            raise DomainError("psi with theta = 0 is not differentiable at x*")

    def value(x, t):
        _, s = base(x)
        return K * s ** (gamma / 2)

    def gradient(x, t):
        d, s = base(x)
        guard(s)
        return (K * gamma * s ** (gamma / 2 - 1))[:, None] * d

    def hessian(x, t):
        d, s = base(x)
        guard(s)
        eye = np.eye(n)[None]
        outer = d[:, :, None] * d[:, None, :]
        return K * gamma * (s[:, None, None] ** (gamma / 2 - 1) * eye
                            + (gamma - 2) * s[:, None, None] ** (gamma / 2 - 2) * outer)

    return SmoothCandidate(value, gradient, hessian, lambda x, t: np.zeros(x.shape[0]),
                           "supersolution_candidate", n)


def consistency_gate(candidate, x, t=0.0, h=1e-4):
    """Largest mismatch between closed-form derivatives and centred differences.

    Returns relative errors for the gradient and the Hessian.
    """
    x = as_points(x, candidate.dim)
    tt = _times(t, x.shape[0])
    n = candidate.dim
    g = candidate.gradient(x, tt)
    H = candidate.hessian(x, tt)
    g_fd = np.empty_like(g)
    H_fd = np.empty_like(H)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        g_fd[:, i] = (candidate.value(x + e, tt) - candidate.value(x - e, tt)) / (2 * h)
        H_fd[:, :, i] = (candidate.gradient(x + e, tt) - candidate.gradient(x - e, tt)) / (2 * h)
    def rel(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300 + np.abs(b).max() * 1e-12)))
    return {"gradient": rel(g, g_fd), "hessian": rel(H, H_fd)}


def gamma_threshold(alpha, beta):
    """max{2(1 - beta), 1 - alpha}."""
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0.0 < v <= 1.0:
            raise DomainError(f"{name} must lie in (0, 1], got {v}")
    return max(2.0 * (1.0 - beta), 1.0 - alpha)


def residual(candidate, field, x, t=0.0):
    """d_t w - b . grad w - Tr(A D^2 w) with A = sigma sigma^T / 2, per point.

    Nonnegative values mark a classical supersolution at the point.
    """
    x = as_points(x, field.dim_state)
    tt = _times(t, x.shape[0])
    A = field.a(x)
    return (candidate.time_derivative(x, tt)
            - np.sum(field.b(x) * candidate.gradient(x, tt), axis=1)
            - np.einsum("pij,pji->p", A, candidate.hessian(x, tt)))


def analytic_lower_bound(r, gamma, alpha, beta, C_b, C_sigma, n, xi):
    """The closed-form radial lower bound that the supersolution argument asserts."""
    r = np.asarray(r, dtype=float)
    return (-gamma * C_b * r ** (alpha + gamma - 1)
            - gamma * C_sigma / n * r ** (2 * beta + gamma - 1)
            + 2 * gamma * (1 - gamma / 2) / (n * C_sigma) * r ** (2 * beta + gamma - 2)
            - 3 * xi)


def exact_radial_residual(r, gamma, K, b_radial, a_radial):
    """Residual of K r^gamma (theta = 0, n = 1, x > x*) for outward drift ``b_radial``
    and half-variance ``a_radial`` at radius r."""
    r = np.asarray(r, dtype=float)
    return (-b_radial * K * gamma * r ** (gamma - 1)
            - a_radial * K * gamma * (gamma - 1) * r ** (gamma - 2))


@dataclass
class Certificate:
    x_star: list
    K: float
    gamma: float
    theta_list: list
    xi: float
    r_certified: float
    min_residual: float
    min_residual_certified: float
    radii: np.ndarray
    sampled_min: np.ndarray
    analytic: np.ndarray
    field_tag: str
    notes: list

    def as_dict(self):
        return {"x_star": self.x_star, "K": self.K, "gamma": self.gamma,
                "theta_list": self.theta_list, "xi": self.xi, "r_certified": self.r_certified,
                "min_residual": self.min_residual,
                "min_residual_certified": self.min_residual_certified,
                "field": self.field_tag, "notes": self.notes}


def _sample_ball(x_star, r, num_points, seed):
    """Radii log-spaced down to 1e-6 r and uniformly spaced up to r.

    In one dimension each radius is used on both sides of x*; otherwise
    each radius gets a random direction.
    """
    n = x_star.size
    k = num_points // 2
    rad = np.unique(np.concatenate([r * np.logspace(-6, 0, k),
                                    r * np.arange(1, num_points - k + 1) / (num_points - k)]))
    if n == 1:
        pts = np.concatenate([x_star + rad[:, None], x_star - rad[:, None]])
        return pts, np.concatenate([rad, rad])
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((rad.size, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return x_star + rad[:, None] * dirs, rad


def supersolution_neighborhood(field, x_star, K=1.0, gamma=0.5, theta_list=(1e-2, 1e-3, 1e-4),
                               xi=1e-3, num_points=10_000, seed=0):
    """Largest radius on which psi_theta has residual > -3 xi for every theta.

    The sampled residual is reported alongside the analytic lower-bound curve.
    """
    thr = gamma_threshold(field.holder_alpha, field.holder_beta)
    if not gamma > thr:
        raise DomainError(f"gamma = {gamma} does not exceed the threshold {thr}")
    if not 0 < gamma < 1:
        raise DomainError("gamma must lie in (0, 1)")
    if xi <= 0:
        raise DomainError("xi must be positive")
    theta_list = [float(s) for s in theta_list]
    if any(b >= a for a, b in zip(theta_list, theta_list[1:])) or min(theta_list) <= 0:
        raise DomainError("theta_list must be positive and strictly decreasing")
    xs = np.atleast_1d(np.asarray(x_star, dtype=float))
    r_decl = field.is_declared(xs)
    if r_decl is None:
        raise DomainError("x_star is not a declared degenerate point")
    notes = []
    deg = check_degenerate_point(field, xs, num_samples=2048, seed=seed)
    if not deg.passed:
        raise DomainError("field fails the degenerate-point bounds at x_star: " + "; ".join(deg.notes))
    ex = check_exponents(field.holder_alpha, field.holder_beta)
    if ex.slack_1 < 0:
        raise DomainError(f"1 + alpha - 2 beta = {ex.slack_1} < 0")
    if ex.slack_1 == 0:
        notes.append("boundary case 1 + alpha - 2 beta = 0: drift and diffusion terms are of equal order")
    pts, rad = _sample_ball(xs, r_decl, num_points, seed)
    worst = np.full(pts.shape[0], np.inf)
    for th in theta_list:
        worst = np.minimum(worst, residual(make_psi(xs, K, gamma, th), field, pts, 0.0))
    fail = worst <= -3 * xi
    # largest sampled radius such that every sample at or below it passes
    r_cert = float(rad[rad < rad[fail].min()].max(initial=0.0)) if fail.any() else float(r_decl)
    inside = rad <= r_cert
    order = np.argsort(rad, kind="stable")
    uniq, first = np.unique(rad[order], return_index=True)
    sampled = np.minimum.reduceat(worst[order], first)
    n = xs.size
    analytic = analytic_lower_bound(uniq, gamma, field.holder_alpha, field.holder_beta,
                                    field.const_b, field.const_sigma, n, xi)
    pos = analytic > 0
    if pos.any():
        notes.append(f"analytic bound is positive up to r = {uniq[pos].max():.4g}")
    return Certificate(xs.tolist(), float(K), float(gamma), theta_list, float(xi), r_cert,
                       float(worst.min()), float(worst[inside].min()) if inside.any() else float("nan"),
                       uniq, sampled, analytic, field.tag, notes)


def comparison_diagnostic(u, v, window, tol=None, lip=None):
    """sup_{window x [0,T]} (u - v) against sup_window (u_0 - v_0) v 0.

    Default slack is 2 (h + dt) times a Lipschitz estimate of the data.
    """
    if u.grid != v.grid:
        raise DomainError("u and v live on different grids")
    g = u.grid
    mask = g.window_mask(window)
    d = np.asarray(u.values, dtype=float) - np.asarray(v.values, dtype=float)
    lhs = float(np.max(d[:, mask]))
    rhs = max(float(np.max(d[0][mask])), 0.0)
    if tol is None:
        if lip is None:
            u0 = np.asarray(u.values[0]) - np.asarray(v.values[0])
            lip = max((float(np.max(np.abs(np.diff(u0, axis=i)))) / g.h for i in range(g.dim)),
                      default=0.0)
        tol = 2.0 * (g.h + g.dt) * lip
    return {"lhs": lhs, "rhs": rhs, "tol": float(tol), "pass": bool(lhs <= rhs + tol)}


def residual_additivity_check(w, v, field, x, t=0.0, rtol=1e-12):
    """residual(w + v) equals residual(w) + residual(v) pointwise."""
    rw = residual(w, field, x, t)
    rv = residual(v, field, x, t)
    rs = residual(w + v, field, x, t)
    scale = np.maximum(1.0, np.abs(rw) + np.abs(rv))
    err = float(np.max(np.abs(rs - rw - rv) / scale))
    both_sub = bool(np.all(rw <= 0) and np.all(rv <= 0))
    return {"max_rel_error": err, "pass": err <= rtol,
            "sum_is_subsolution": bool(np.all(rs <= rtol * scale)) if both_sub else None}
