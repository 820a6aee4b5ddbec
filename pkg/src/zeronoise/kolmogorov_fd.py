"""Monotone explicit finite differences for du/dt = Tr(a D^2 u) + b . Du, a = sigma sigma^T / 2.

The stencil is the upwind, diagonally dominant (Kushner-Dupuis) one.  Each
update is written as a convex combination ``c u + sum_k w_k u_k`` with
nonnegative weights and then clipped to the range of the initial datum,
so the discrete maximum principle and comparison hold exactly in floating
point.
"""

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit
from scipy import ndimage

from .coeffs import perturb
from .errors import CFLError, DomainError, MonotonicityError

BOUNDARIES = ("frozen_dirichlet", "one_sided_extrapolation")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on an axis-aligned box, with ``n_steps`` explicit steps of
    size ``dt`` up to ``T`` and ``slices + 1`` stored time slices."""

    box: tuple
    h: float
    T: float
    dt: float
    boundary: str = "frozen_dirichlet"
    slices: int = 100

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in np.asarray(self.box, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "box", box)
        if any(hi <= lo for lo, hi in box):
            raise DomainError("grid box has zero volume")
        if not (self.h > 0 and self.T > 0 and self.dt > 0):
            raise DomainError("h, T and dt must be positive")
        if self.boundary not in BOUNDARIES:
            raise DomainError(f"unknown boundary {self.boundary!r}")
        if self.slices < 1 or self.n_steps % self.slices:
            raise DomainError("the number of steps must be a multiple of slices")

    @classmethod
    def for_fields(cls, box, h, T, fields, safety=0.9, slices=100, boundary="frozen_dirichlet"):
        """Largest dt meeting the CFL bound (times ``safety``) for every field."""
        probe = cls(box, h, T, T / slices, boundary, slices)
        rate = max(float(np.max(_rates(f, probe))) for f in fields)
        n = slices if rate == 0 else slices * max(1, math.ceil(T * rate / (safety * slices)))
        return cls(box, h, T, T / n, boundary, slices)

    @property
    def dim(self):
        return len(self.box)

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def steps_per_slice(self):
        return self.n_steps // self.slices

    @property
    def axes(self):
        return [lo + self.h * np.arange(int(round((hi - lo) / self.h)) + 1) for lo, hi in self.box]

    @property
    def shape(self):
        return tuple(int(round((hi - lo) / self.h)) + 1 for lo, hi in self.box)

    @property
    def num_nodes(self):
        return int(np.prod(self.shape))

    @property
    def nodes(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.slices + 1)

    def window_mask(self, window):
        win = np.asarray(window, dtype=float).reshape(-1, 2)
        x = self.nodes
        tol = 1e-9 * self.h
        return np.all((x >= win[:, 0] - tol) & (x <= win[:, 1] + tol), axis=1).reshape(self.shape)

    def header(self):
        return {"box": [list(b) for b in self.box], "h": self.h, "T": self.T, "dt": self.dt,
                "boundary": self.boundary, "slices": self.slices}


@dataclass(frozen=True)
class LatticeFunction:
    """Values on the grid; ``values[j]`` is the slice at ``grid.times[j]``."""

    grid: GridSpec
    values: np.ndarray
    payoff_tag: str = "custom"
    field_tag: str = "custom"
    eps: float = 0.0

    def slice_at(self, t):
        j = int(round(t / self.grid.T * self.grid.slices))
        if abs(self.grid.times[j] - t) > 1e-9 * max(1.0, self.grid.T):
            raise DomainError(f"time {t} is not a stored slice")
        return self.values[j]

    def probe(self, x, t):
        """Value at (x, t); linear interpolation in space (n = 1), nearest node otherwise."""
        u = self.slice_at(t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.grid.dim == 1:
            return np.interp(x.ravel(), self.grid.axes[0], u)
        pts = x.reshape(-1, self.grid.dim)
        idx = tuple(np.clip(np.rint((pts[:, i] - self.grid.box[i][0]) / self.grid.h).astype(int),
                            0, self.grid.shape[i] - 1) for i in range(self.grid.dim))
        return u[idx]

    def header(self):
        return dict(self.grid.header(), field=self.field_tag, eps=self.eps,
                    payoff=self.payoff_tag, shape=list(self.values.shape))

    def save(self, stem):
        """Flat little-endian float64 values plus a JSON header."""
        import json
        from .io import atomic_write
        atomic_write(f"{stem}.bin", self.values.astype("<f8").tobytes())
        atomic_write(f"{stem}.json", json.dumps(self.header(), indent=2, sort_keys=True))


@dataclass(frozen=True)
class Stencil:
    nb: np.ndarray
    w: np.ndarray
    c: np.ndarray
    active: np.ndarray
    rate_max: float


def _coeff_at_nodes(field, grid):
    x = grid.nodes
    return field.a(x), field.b(x)


def _offdiag_abs_sum(a):
    n = a.shape[1]
    s = np.abs(a).sum(axis=2) - np.abs(a[:, np.arange(n), np.arange(n)])
    return s


def _rates(field, grid):
    a, b = _coeff_at_nodes(field, grid)
    h = grid.h
    n = a.shape[1]
    diag = a[:, np.arange(n), np.arange(n)]
    cross = 0.5 * _offdiag_abs_sum(a).sum(axis=1)
    return 2 * diag.sum(axis=1) / h ** 2 - 2 * cross / h ** 2 + np.abs(b).sum(axis=1) / h


def build_stencil(field, grid):
    """Neighbour indices, nonnegative weights and centre weights for one step.

    Raises MonotonicityError if a = sigma sigma^T / 2 is not diagonally
    dominant at some node and CFLError if dt times the exit rate exceeds 1.
    """
    if field.dim_state != grid.dim:
        raise DomainError("field and grid dimensions differ")
    a, b = _coeff_at_nodes(field, grid)
    n, h, dt = grid.dim, grid.h, grid.dt
    P = grid.num_nodes
    diag = a[:, np.arange(n), np.arange(n)]
    off = _offdiag_abs_sum(a)
    slack = diag - off
    bad = np.nonzero(slack < -1e-13 * np.maximum(1.0, diag.max(axis=1, keepdims=True)))[0]
    if bad.size:
        nodes = grid.nodes[np.unique(bad)]
        raise MonotonicityError(f"diffusion matrix not diagonally dominant at {len(nodes)} nodes",
                                nodes=nodes.tolist())
    rate = _rates(field, grid)
    if dt * rate.max() > 1 + 1e-12:
        raise CFLError(f"dt * rate = {dt * rate.max():.6g} > 1")
    shape = grid.shape
    ijk = np.stack(np.unravel_index(np.arange(P), shape), axis=1)
    offsets, weights = [], []
    for i in range(n):
        e = np.zeros(n, dtype=int)
        e[i] = 1
        base = np.maximum(slack[:, i], 0.0) / h ** 2
        offsets += [e, -e]
        weights += [base + np.maximum(b[:, i], 0.0) / h, base + np.maximum(-b[:, i], 0.0) / h]
    for i, j in itertools.combinations(range(n), 2):
        e = np.zeros(n, dtype=int)
        e[i] = 1
        f = np.zeros(n, dtype=int)
        f[j] = 1
        pos = np.maximum(a[:, i, j], 0.0) / h ** 2
        neg = np.maximum(-a[:, i, j], 0.0) / h ** 2
        offsets += [e + f, -e - f, e - f, -e + f]
        weights += [pos, pos, neg, neg]
    nb = np.empty((len(offsets), P), dtype=np.int64)
    inside = np.ones(P, dtype=bool)
    for k, off_k in enumerate(offsets):
        tgt = ijk + off_k
        ok = np.all((tgt >= 0) & (tgt < np.asarray(shape)), axis=1)
        inside &= ok
        tgt = np.clip(tgt, 0, np.asarray(shape) - 1)
        nb[k] = np.ravel_multi_index(tuple(tgt.T), shape)
    w = dt * np.asarray(weights)
    c = 1.0 - w.sum(axis=0)
    c = np.maximum(c, 0.0)
    active = inside if grid.boundary == "frozen_dirichlet" else np.ones(P, dtype=bool)
    return Stencil(nb, w, c, active, float(rate.max()))


@njit(cache=True)
def _advance(u, nb, w, c, active, lo, hi, nsteps):
    P = u.size
    K = nb.shape[0]
    cur = u.copy()
    nxt = u.copy()
    for _ in range(nsteps):
        for p in range(P):
            if not active[p]:
                nxt[p] = cur[p]
                continue
            v = c[p] * cur[p]
            for k in range(K):
                v += w[k, p] * cur[nb[k, p]]
            if v < lo:
                v = lo
            elif v > hi:
                v = hi
            nxt[p] = v
        cur, nxt = nxt, cur
    return cur


def step(u_slice, field, grid, stencil=None):
    """One explicit step of the monotone scheme."""
    st = build_stencil(field, grid) if stencil is None else stencil
    u = np.ascontiguousarray(u_slice, dtype=float).ravel()
    if u.size != grid.num_nodes:
        raise DomainError("slice does not match grid")
    return _advance(u, st.nb, st.w, st.c, st.active, u.min(), u.max(), 1).reshape(grid.shape)


def solve(field, f, grid, stencil=None):
    """All stored slices of the solution with initial datum ``f``.

    ``f`` is a Payoff or an array of nodal values.
    """
    st = build_stencil(field, grid) if stencil is None else stencil
    if callable(f):
        u0 = np.asarray(f(grid.nodes), dtype=float)
        tag = getattr(f, "tag", "custom")
    else:
        u0 = np.asarray(f, dtype=float).ravel()
        tag = "nodal"
    if u0.size != grid.num_nodes or not np.all(np.isfinite(u0)):
        raise DomainError("initial datum must be finite at every node")
    lo, hi = float(u0.min()), float(u0.max())
    out = np.empty((grid.slices + 1, grid.num_nodes))
    out[0] = u0
    u = u0
    for j in range(grid.slices):
        u = _advance(u, st.nb, st.w, st.c, st.active, lo, hi, grid.steps_per_slice)
        out[j + 1] = u
    values = out.reshape((grid.slices + 1,) + grid.shape)
    values.setflags(write=False)
    return LatticeFunction(grid, values, tag, field.tag, field.eps)


def influence_margin(field, T, eps_max):
    return T * field.sup_b + 6.0 * math.sqrt(T * (field.sup_sigma ** 2 + eps_max))


@dataclass
class SweepReport:
    eps_list: list
    solutions: list
    window: np.ndarray
    tau: float
    cauchy: np.ndarray
    increments: list
    converging: bool
    columns_decreasing: bool
    margin: float
    richardson: LatticeFunction | None = None
    notes: list = dc_field(default_factory=list)

    @property
    def selected(self):
        return self.solutions[-1]

    @property
    def error_bar(self):
        return self.increments[-1]

    @property
    def grid(self):
        return self.selected.grid

    def as_dict(self):
        return {"eps": self.eps_list, "cauchy": self.cauchy.tolist(),
                "increments": self.increments, "error_bar": self.error_bar,
                "converging": self.converging, "columns_decreasing": self.columns_decreasing,
                "window": self.window.tolist(), "tau": self.tau, "margin": self.margin,
                "grid": self.grid.header(), "notes": self.notes}


def _restricted(lat, mask, tau):
    g = lat.grid
    last = int(np.floor((g.T - tau) / g.T * g.slices + 1e-9))
    return lat.values[: last + 1][:, mask]


def eps_sweep(family, f, eps_list, grid, window, tau=0.0):
    """Solve for each eps and tabulate sup-distances on window x [0, T - tau]."""
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3 or any(b >= a for a, b in zip(eps_list, eps_list[1:])) or eps_list[-1] <= 0:
        raise DomainError("eps_list must be positive, strictly decreasing, length >= 3")
    if not 0 <= tau < grid.T:
        raise DomainError("tau must lie in [0, T)")
    win = np.asarray(window, dtype=float).reshape(-1, 2)
    margin = influence_margin(family.base, grid.T, eps_list[0])
    for (lo, hi), (wlo, whi) in zip(grid.box, win):
        if wlo - margin < lo - 1e-12 or whi + margin > hi + 1e-12:
            raise DomainError(f"window must keep the influence margin {margin:.4g} from the box")
    mask = grid.window_mask(win)
    sols = [solve(perturb(family, e), f, grid) for e in eps_list]
    parts = [_restricted(s, mask, tau) for s in sols]
    k = len(sols)
    D = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            D[i, j] = D[j, i] = float(np.max(np.abs(parts[i] - parts[j])))
    inc = [float(D[i, i - 1]) for i in range(1, k)]
    converging = all(b < a for a, b in zip(inc, inc[1:]))
    cols = all(D[i + 1, j] < D[i, j] for j in range(k) for i in range(j - 1))
    e1, e0 = eps_list[-1], eps_list[-2]
    rich_vals = sols[-1].values + (sols[-1].values - sols[-2].values) * e1 / (e0 - e1)
    rich = LatticeFunction(grid, rich_vals, sols[-1].payoff_tag, sols[-1].field_tag, 0.0)
    notes = ["Richardson value assumes first order in eps (heuristic)"]
    if not converging:
        notes.append("successive increments are not decreasing")
    return SweepReport(eps_list, sols, win, float(tau), D, inc, converging, cols, margin, rich, notes)


@dataclass
class Semilimits:
    u_star: LatticeFunction
    u_lower: LatticeFunction
    deltas: list
    gaps: list


def _ball_filter(values, radius_nodes, op):
    n = values.ndim
    r = radius_nodes
    if r == 0:
        return values
    if n == 1:
        size = 2 * r + 1
        return (ndimage.maximum_filter1d if op == "max" else ndimage.minimum_filter1d)(
            values, size, mode="nearest")
    g = np.indices((2 * r + 1,) * n) - r
    foot = np.sqrt((g ** 2).sum(axis=0)) <= r
    return (ndimage.maximum_filter if op == "max" else ndimage.minimum_filter)(
        values, footprint=foot, mode="nearest")


def _relaxed(sols, delta, op):
    g = sols[0].grid
    ds = g.T / g.slices
    kmax = int(np.ceil(delta / ds)) - 1 if ds > 0 else 0
    reduce_ = np.maximum if op == "max" else np.minimum
    out = None
    for s in sols:
        acc = None
        for k in range(-kmax, kmax + 1):
            rt = delta - abs(k) * ds
            if rt <= 1e-12 * delta:
                continue
            rn = int(np.ceil(rt / g.h)) - 1
            filt = np.stack([_ball_filter(v, rn, op) for v in s.values])
            # slices outside [0, T] do not exist and contribute nothing
            shifted = np.full_like(filt, -np.inf if op == "max" else np.inf)
            J = filt.shape[0]
            if k >= 0:
                shifted[: J - k] = filt[k:]
            else:
                shifted[-k:] = filt[: J + k]
            acc = shifted if acc is None else reduce_(acc, shifted)
        out = acc if out is None else reduce_(out, acc)
    return out


def semilimits(sweep, delta_list, window=None):
    """Discrete relaxed upper and lower semilimits over (x, t, eps) balls.

    For each delta the sup (inf) runs over solutions with eps < delta and
    nodes with |x - y| + |t - s| < delta.  The pair returned is the one for
    the smallest delta; ``gaps`` lists sup(u* - u_*) on the window.
    """
    delta_list = [float(d) for d in delta_list]
    g = sweep.grid
    if any(b >= a for a, b in zip(delta_list, delta_list[1:])):
        raise DomainError("delta_list must be strictly decreasing")
    if min(delta_list) < g.h * (1 - 1e-12):
        raise DomainError("delta finer than the grid spacing")
    win = sweep.window if window is None else np.asarray(window, dtype=float).reshape(-1, 2)
    mask = g.window_mask(win)
    gaps = []
    last = None
    for d in delta_list:
        sols = [s for s, e in zip(sweep.solutions, sweep.eps_list) if e < d]
        if not sols:
            raise DomainError(f"no solution with eps < delta = {d}")
        up = _relaxed(sols, d, "max")
        lo = _relaxed(sols, d, "min")
        gaps.append(float(np.max((up - lo)[:, mask])))
        last = (up, lo)
    tag = sweep.selected.payoff_tag
    u_star = LatticeFunction(g, last[0], tag, sweep.selected.field_tag, 0.0)
    u_lower = LatticeFunction(g, last[1], tag, sweep.selected.field_tag, 0.0)
    return Semilimits(u_star, u_lower, delta_list, gaps)
