"""Coefficient fields (b, sigma), small-noise perturbations, and assumption checkers.

Fields are vectorised: ``drift`` maps ``(P, n)`` points to ``(P, n)``,
``diffusion`` maps them to ``(P, n, m)``.
"""

from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import qmc

from .errors import DomainError
from .payoffs import as_points

SNAP = 1e-12
EXACT_TOL = 1e-10


@dataclass(frozen=True)
class CoefficientField:
    dim_state: int
    dim_noise: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    sup_b: float
    sup_sigma: float
    holder_alpha: float
    holder_beta: float
    const_b: float
    const_sigma: float
    degenerate_points: tuple = ()
    tag: str = "custom"
    params: dict = dc_field(default_factory=dict)
    eps: float = 0.0

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise DomainError("dimensions must be positive")
        if self.sup_b < 0 or self.sup_sigma < 0:
            raise DomainError("sup bounds must be nonnegative")
        for name in ("holder_alpha", "holder_beta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DomainError(f"{name} must lie in (0, 1], got {v}")
        if self.const_b <= 0 or self.const_sigma <= 0:
            raise DomainError("Hölder constants must be positive")
        pts = []
        for p, r in self.degenerate_points:
            p = np.asarray(p, dtype=float).reshape(self.dim_state)
            if r <= 0:
                raise DomainError("degenerate point radius must be positive")
            pts.append((p, float(r)))
        object.__setattr__(self, "degenerate_points", tuple(pts))

    def b(self, x):
        x = as_points(x, self.dim_state)
        return np.asarray(self.drift(x), dtype=float).reshape(x.shape[0], self.dim_state)

    def sigma(self, x):
        x = as_points(x, self.dim_state)
        return np.asarray(self.diffusion(x), dtype=float).reshape(
            x.shape[0], self.dim_state, self.dim_noise)

    def a(self, x):
        """Half the diffusion matrix, 1/2 sigma sigma^T, shape (P, n, n)."""
        s = self.sigma(x)
        return 0.5 * np.matmul(s, np.swapaxes(s, 1, 2))

    @property
    def K(self):
        return max(self.sup_b, self.sup_sigma)

    def is_declared(self, x_star, tol=1e-12):
        x_star = np.asarray(x_star, dtype=float).reshape(self.dim_state)
        for p, r in self.degenerate_points:
            if np.linalg.norm(p - x_star) <= tol:
                return r
        return None


@dataclass(frozen=True)
class PerturbationFamily:
    """Rule eps -> (b^eps, sigma^eps).

    ``additive_isotropic`` keeps the drift and appends sqrt(eps) I to sigma.
    ``custom`` needs ``drift_rule(eps, X)``, ``diffusion_rule(eps, X)`` and
    ``bounds_rule(eps) -> (sup_b, sup_sigma, dim_noise)``.
    """

    base: CoefficientField
    scheme: str = "additive_isotropic"
    drift_rule: Callable | None = None
    diffusion_rule: Callable | None = None
    bounds_rule: Callable | None = None

    def __post_init__(self):
        if self.scheme not in ("additive_isotropic", "custom"):
            raise DomainError(f"unknown perturbation scheme {self.scheme!r}")
        if self.scheme == "custom" and None in (self.drift_rule, self.diffusion_rule, self.bounds_rule):
            raise DomainError("custom perturbation needs drift, diffusion and bounds rules")


def perturb(family, eps):
    """The coefficient field of the eps-perturbed equation."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    base = family.base
    n, m = base.dim_state, base.dim_noise
    if family.scheme == "additive_isotropic":
        root = float(np.sqrt(eps))
        eye = root * np.eye(n)

        def diffusion(x, _s=base.sigma):
            s = _s(x)
            return np.concatenate([s, np.broadcast_to(eye, (s.shape[0], n, n))], axis=2)

        return replace(base, dim_noise=m + n, drift=base.b, diffusion=diffusion,
                       sup_sigma=float(np.sqrt(base.sup_sigma ** 2 + n * eps)), eps=float(eps))
    sup_b, sup_s, m_eps = family.bounds_rule(eps)
    return replace(base, dim_noise=int(m_eps), drift=lambda x: family.drift_rule(eps, x),
                   diffusion=lambda x: family.diffusion_rule(eps, x),
                   sup_b=float(sup_b), sup_sigma=float(sup_s), eps=float(eps))


@dataclass
class CheckReport:
    name: str
    passed: bool
    metrics: dict = dc_field(default_factory=dict)
    notes: list = dc_field(default_factory=list)
    waived: bool = False

    @property
    def ok(self):
        return self.passed or self.waived

    def as_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "waived": bool(self.waived),
                "metrics": {k: _jsonable(v) for k, v in self.metrics.items()},
                "notes": list(self.notes)}


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(u) for u in v]
    return v


def _box(box, n):
    box = np.asarray(box, dtype=float).reshape(-1, 2) if np.ndim(box) > 0 else None
    if box is None or box.shape != (n, 2):
        raise DomainError(f"box must be {n} (lo, hi) pairs")
    if np.any(box[:, 1] <= box[:, 0]):
        raise DomainError("box has zero volume")
    return box


def check_holder(field, sample_box, num_pairs=4096, seed=0):
    """Largest sampled Hölder ratios of b and sigma against (C_b, alpha), (C_sigma, beta).

    Sobol pairs are supplemented with forced close pairs (distances down to
    1e-6) anchored at the box centre, at declared degenerate points and at
    a few quasi-random points.
    """
    n = field.dim_state
    box = _box(sample_box, n)
    if num_pairs < 1:
        raise DomainError("num_pairs must be positive")
    lo, width = box[:, 0], box[:, 1] - box[:, 0]
    sob = qmc.Sobol(d=2 * n, scramble=True, seed=np.random.default_rng(seed))
    u = sob.random_base2(max(0, int(np.ceil(np.log2(num_pairs)))))[:num_pairs]
    x = lo + width * u[:, :n]
    y = lo + width * u[:, n:]
    anchors = [lo + 0.5 * width] + [p for p, _ in field.degenerate_points]
    rng = np.random.default_rng(seed + 1)
    anchors += list(lo + width * rng.random((8, n)))
    dists = 10.0 ** -np.arange(1, 7)
    fx, fy = [], []
    for a in anchors:
        for d in dists:
            for _ in range(2):
                v = rng.standard_normal(n)
                v /= np.linalg.norm(v)
                fx.append(a)
                fy.append(a + d * v)
            # pair straddling the anchor
            fx.append(a - 0.5 * d * v)
            fy.append(a + 0.5 * d * v)
    x = np.vstack([x, np.asarray(fx)])
    y = np.vstack([y, np.asarray(fy)])
    x = np.clip(x, box[:, 0], box[:, 1])
    y = np.clip(y, box[:, 0], box[:, 1])
    dist = np.linalg.norm(x - y, axis=1)
    keep = dist > 0
    x, y, dist = x[keep], y[keep], dist[keep]
    db = np.linalg.norm(field.b(x) - field.b(y), axis=1)
    ds = np.linalg.norm((field.sigma(x) - field.sigma(y)).reshape(x.shape[0], -1), axis=1)
    rb = float(np.max(db / dist ** field.holder_alpha))
    rs = float(np.max(ds / dist ** field.holder_beta))
    ok_b = rb <= field.const_b * (1 + EXACT_TOL)
    ok_s = rs <= field.const_sigma * (1 + EXACT_TOL)
    notes = []
    if not ok_b:
        notes.append(f"drift ratio {rb:.6g} exceeds C_b={field.const_b:.6g}")
    if not ok_s:
        notes.append(f"diffusion ratio {rs:.6g} exceeds C_sigma={field.const_sigma:.6g}")
    return CheckReport("holder", bool(ok_b and ok_s),
                       {"ratio_b": rb, "ratio_sigma": rs, "const_b": field.const_b,
                        "const_sigma": field.const_sigma, "num_pairs": int(x.shape[0]),
                        "min_distance": float(dist.min())}, notes)


def check_degenerate_point(field, x_star, r=None, num_samples=4096, seed=0):
    """Two-sided power bound of sigma sigma^T around a declared degenerate point."""
    n = field.dim_state
    x_star = np.asarray(x_star, dtype=float).reshape(n)
    r_decl = field.is_declared(x_star)
    if r_decl is None:
        raise DomainError(f"{x_star.tolist()} is not a declared degenerate point")
    r = r_decl if r is None else float(r)
    if r <= 0 or num_samples < 1:
        raise DomainError("radius and num_samples must be positive")
    rng = np.random.default_rng(seed)
    b0 = float(np.linalg.norm(field.b(x_star)))
    s0 = float(np.linalg.norm(field.sigma(x_star)))
    # radii: log-spaced near the point plus uniform in the ball
    rad = np.concatenate([r * np.logspace(-6, 0, num_samples // 2),
                          r * rng.random(num_samples - num_samples // 2) ** (1.0 / n)])
    rad = rad[rad > 0]
    dirs = rng.standard_normal((rad.size, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    y = x_star + rad[:, None] * dirs
    # distances as realised in floating point
    rad = np.linalg.norm(y - x_star, axis=1)
    keep = rad > 0
    y, rad = y[keep], rad[keep]
    v = rng.standard_normal((rad.size, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    s = field.sigma(y)
    q = np.sum(np.einsum("pi,pij->pj", v, s) ** 2, axis=1)
    scale = rad ** (2 * field.holder_beta)
    c = field.const_sigma
    lower = (q - scale / c) / scale
    upper = (c * scale - q) / scale
    worst = float(min(lower.min(), upper.min()))
    notes = []
    ok_zero = b0 <= EXACT_TOL and s0 <= EXACT_TOL
    if not ok_zero:
        notes.append(f"coefficients do not vanish at x*: |b|={b0:.3g}, |sigma|={s0:.3g}")
    if lower.min() < -EXACT_TOL:
        notes.append("lower diffusion bound violated")
    if upper.min() < -EXACT_TOL:
        notes.append("upper diffusion bound violated")
    passed = ok_zero and worst >= -EXACT_TOL
    return CheckReport("degenerate_point", bool(passed),
                       {"x_star": x_star.tolist(), "r": r, "b_at_x_star": b0,
                        "sigma_at_x_star": s0, "lower_margin": float(lower.min()),
                        "upper_margin": float(upper.min()), "worst_margin": worst,
                        "num_samples": int(rad.size)}, notes)


class ExponentCheck(NamedTuple):
    passed: bool
    slack_1: float
    slack_2: float


def _snap(v):
    return 0.0 if abs(v) < SNAP else v


def check_exponents(alpha, beta):
    """Slacks 1 + alpha - 2 beta and beta - 1/2; both must be strictly positive."""
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0.0 < v <= 1.0:
            raise DomainError(f"{name} must lie in (0, 1], got {v}")
    s1 = _snap(1.0 + alpha - 2.0 * beta)
    s2 = _snap(beta - 0.5)
    return ExponentCheck(bool(s1 > 0 and s2 > 0), s1, s2)


def _grid_points(box, per_axis):
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def verify_perturbation_assumption(family, eps_list, compact_box, tol=1e-1, per_axis=None):
    """Uniform convergence of (b^eps, sigma^eps sigma^eps^T) on a compact box and
    positive definiteness of the perturbed diffusion matrix."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise DomainError("eps_list must be nonempty and positive")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("eps_list must be strictly decreasing")
    base = family.base
    n = base.dim_state
    box = _box(compact_box, n)
    if per_axis is None:
        per_axis = {1: 2001, 2: 101}.get(n, 21)
    x = _grid_points(box, per_axis)
    b0 = base.b(x)
    s0 = base.sigma(x)
    q0 = np.matmul(s0, np.swapaxes(s0, 1, 2))
    db, dq, lam = [], [], []
    for e in eps_list:
        f = perturb(family, e)
        se = f.sigma(x)
        qe = np.matmul(se, np.swapaxes(se, 1, 2))
        db.append(float(np.max(np.linalg.norm(f.b(x) - b0, axis=1))))
        dq.append(float(np.max(np.linalg.norm(qe - q0, ord=2, axis=(1, 2)))))
        lam.append(float(np.min(np.linalg.eigvalsh(qe))))
    def settles(seq):
        return seq[-1] <= tol and all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(seq, seq[1:]))
    passed = settles(db) and settles(dq) and all(v > 0 for v in lam)
    notes = []
    if not all(v > 0 for v in lam):
        notes.append("perturbed diffusion matrix not positive definite somewhere")
    return CheckReport("perturbation", bool(passed),
                       {"eps": eps_list, "sup_drift_diff": db, "sup_diffusion_diff": dq,
                        "min_eigenvalue": lam, "tol": tol}, notes)


# built-in fields ----------------------------------------------------------

def _scalar_field(bfun, sfun, **meta):
    def drift(x):
        return bfun(x[:, 0]).reshape(-1, 1)

    def diffusion(x):
        return sfun(x[:, 0]).reshape(-1, 1, 1)

    return CoefficientField(dim_state=1, dim_noise=1, drift=drift, diffusion=diffusion, **meta)


def _zero(x):
    return np.zeros_like(x)


def peano_alpha(alpha=0.5, cap=1.0):
    """b(x) = min(|x|, cap)^alpha, sigma = 0."""
    if not 0 < alpha < 1:
        raise DomainError("peano exponent must lie in (0, 1)")
    return _scalar_field(lambda x: np.minimum(np.abs(x), cap) ** alpha, _zero,
                         sup_b=cap ** alpha, sup_sigma=0.0, holder_alpha=alpha,
                         holder_beta=0.5 + alpha / 4.0, const_b=1.0, const_sigma=1.0,
                         degenerate_points=((np.zeros(1), cap),), tag="peano_alpha",
                         params={"alpha": alpha, "cap": cap})


def cubic(cap=2.0):
    """b(x) = 3 x^(1/3), sigma(x) = 3 x^(2/3), arguments clipped to [-cap, cap]."""
    c = float(np.cbrt(cap))
    return _scalar_field(lambda x: 3.0 * np.cbrt(np.clip(x, -cap, cap)),
                         lambda x: 3.0 * np.cbrt(np.clip(x, -cap, cap)) ** 2,
                         sup_b=3.0 * c, sup_sigma=3.0 * c * c, holder_alpha=1.0 / 3.0,
                         holder_beta=2.0 / 3.0, const_b=3.0 * 2.0 ** (2.0 / 3.0), const_sigma=9.0,
                         degenerate_points=((np.zeros(1), cap),), tag="cubic",
                         params={"cap": cap})


def signed_sqrt():
    """b(x) = sgn(x) |x|^(1/2) on [-1, 1], saturated at +-1 outside; sigma = 0."""
    return _scalar_field(lambda x: np.sign(x) * np.sqrt(np.minimum(np.abs(x), 1.0)), _zero,
                         sup_b=1.0, sup_sigma=0.0, holder_alpha=0.5, holder_beta=0.625,
                         const_b=float(np.sqrt(2.0)), const_sigma=1.0,
                         degenerate_points=((np.zeros(1), 1.0),), tag="signed_sqrt", params={})


def constant_heat(sigma0=float(np.sqrt(2.0)), n=1):
    """b = 0, sigma = sigma0 I."""
    eye = sigma0 * np.eye(n)
    return CoefficientField(dim_state=n, dim_noise=n, drift=lambda x: np.zeros_like(x),
                            diffusion=lambda x: np.broadcast_to(eye, (x.shape[0], n, n)).copy(),
                            sup_b=0.0, sup_sigma=float(abs(sigma0) * np.sqrt(n)),
                            holder_alpha=1.0, holder_beta=0.75, const_b=1.0, const_sigma=1.0,
                            tag="constant_heat", params={"sigma0": sigma0, "n": n})


def power(alpha=0.5, beta=0.75, cap=1.0):
    """b(x) = min(|x|, cap)^alpha, sigma(x) = min(|x|, cap)^beta."""
    return _scalar_field(lambda x: np.minimum(np.abs(x), cap) ** alpha,
                         lambda x: np.minimum(np.abs(x), cap) ** beta,
                         sup_b=cap ** alpha, sup_sigma=cap ** beta, holder_alpha=alpha,
                         holder_beta=beta, const_b=1.0, const_sigma=1.0,
                         degenerate_points=((np.zeros(1), cap),), tag="power",
                         params={"alpha": alpha, "beta": beta, "cap": cap})


def constant_drift(b0=1.0, sigma0=0.0):
    """b = b0, sigma = sigma0 (n = 1)."""
    return _scalar_field(lambda x: np.full_like(x, b0), lambda x: np.full_like(x, sigma0),
                         sup_b=abs(b0), sup_sigma=abs(sigma0), holder_alpha=1.0,
                         holder_beta=0.75, const_b=1.0, const_sigma=1.0,
                         tag="constant_drift", params={"b0": b0, "sigma0": sigma0})


FIELDS = {
    "peano_alpha": peano_alpha,
    "cubic": cubic,
    "signed_sqrt": signed_sqrt,
    "constant_heat": constant_heat,
    "power": power,
    "constant_drift": constant_drift,
}


def field_by_tag(tag, **params):
    try:
        factory = FIELDS[tag]
    except KeyError:
        raise DomainError(f"unknown field tag {tag!r}") from None
    return factory(**params)
