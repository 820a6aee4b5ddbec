"""Euler-Maruyama Monte Carlo for the (perturbed) SDE dX = b dt + sigma dW.

Paths are simulated in fixed blocks of ``BLOCK`` paths.  Each Gaussian
increment comes from a counter-based generator keyed by the seed and
indexed by (step, path), so the result does not depend on how blocks are
distributed over worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .payoffs import Payoff, as_points
from .rng import standard_normals

BLOCK = 4096


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated paths stored at the recorded steps only.

    ``paths`` has shape ``(N, len(record_steps), n)``; ``times`` lists the
    recorded times.
    """

    field: object
    x0: np.ndarray
    T: float
    dt: float
    num_paths: int
    seed: int
    record_steps: np.ndarray
    paths: np.ndarray

    @property
    def times(self):
        return self.record_steps * self.dt

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def index_of(self, t):
        k = _grid_index(t, self.dt)
        hit = np.nonzero(self.record_steps == k)[0]
        if hit.size == 0:
            raise DomainError(f"time {t} was not recorded")
        return int(hit[0])

    def at(self, t):
        return self.paths[:, self.index_of(t), :]

    def sidecar(self):
        return {"field": self.field.tag, "params": self.field.params, "eps": self.field.eps,
                "dt": self.dt, "T": self.T, "N": self.num_paths, "seed": int(self.seed),
                "record_steps": self.record_steps.tolist()}


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_error: float
    num_samples: int
    seed: int

    def within(self, target, k=3.0, slack=0.0):
        return abs(self.value - target) <= k * self.std_error + slack


def _grid_index(t, dt, tol=1e-9):
    k = t / dt
    kr = int(round(k))
    if abs(k - kr) > tol * max(1.0, abs(k)) or kr < 0:
        raise DomainError(f"time {t} is not on the grid of step {dt}")
    return kr


def _check_steps(T, dt):
    if not dt > 0:
        raise DomainError("dt must be positive")
    if not T > 0:
        raise DomainError("T must be positive")
    if dt > T * (1 + 1e-12):
        raise DomainError("dt must not exceed T")
    return _grid_index(T, dt)


def _simulate_block(field, x0, start, count, n_steps, dt, seed, rec_mask, out):
    n, m = field.dim_state, field.dim_noise
    x = x0.copy()
    sq = np.sqrt(dt)
    j = 0
    if rec_mask[0]:
        out[:, j, :] = x
        j += 1
    for k in range(n_steps):
        z = standard_normals(seed, k, start, count, m)
        s = field.sigma(x)
        x = x + field.b(x) * dt + np.sum(s * z[:, None, :], axis=2) * sq
        if rec_mask[k + 1]:
            out[:, j, :] = x
            j += 1


def _starts(field, x0, N):
    n = field.dim_state
    pts = as_points(x0, n)
    if pts.shape[0] == 1:
        return np.broadcast_to(pts, (N, n)).copy()
    if pts.shape[0] != N:
        raise DomainError("grid of starts must have one row per path")
    return pts.copy()


def simulate(field, x0, T, dt, N, seed=0, workers=1, record=None):
    """Euler-Maruyama ensemble.

    ``x0`` is a single point (Dirac law) or an ``(N, n)`` grid of starts.
    ``record`` lists times to store; ``None`` stores every step.
    """
    n_steps = _check_steps(T, dt)
    if N < 1:
        raise DomainError("N must be positive")
    if record is None:
        rec = np.arange(n_steps + 1)
    else:
        rec = np.unique([_grid_index(t, dt) for t in np.atleast_1d(record)])
        if rec.size and rec[-1] > n_steps:
            raise DomainError("record time beyond horizon")
    mask = np.zeros(n_steps + 1, dtype=bool)
    mask[rec] = True
    starts = _starts(field, x0, N)
    paths = np.empty((N, rec.size, field.dim_state))
    blocks = [(s, min(BLOCK, N - s)) for s in range(0, N, BLOCK)]

    def run(blk):
        s, c = blk
        _simulate_block(field, starts[s:s + c], s, c, n_steps, dt, seed, mask, paths[s:s + c])

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(run, blocks))
    else:
        for blk in blocks:
            run(blk)
    paths.setflags(write=False)
    return PathEnsemble(field, as_points(x0, field.dim_state), float(T), float(dt), int(N),
                        int(seed), rec, paths)


def _mean_estimate(samples, seed):
    samples = np.asarray(samples, dtype=float)
    N = samples.size
    value = float(np.clip(np.mean(samples), samples.min(), samples.max()))
    sd = float(np.std(samples, ddof=1)) if N > 1 else 0.0
    return MCEstimate(value, float(sd / np.sqrt(N)), N, seed)


def estimate_u(field, f, x, t, dt, N, seed=0, workers=1):
    """E[f(X_t) | X_0 = x], the solution of the Kolmogorov equation at (x, t)."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    pt = as_points(x, field.dim_state)
    if pt.shape[0] != 1:
        raise DomainError("estimate_u takes a single point")
    if t == 0:
        v = float(f(pt)[0])
        return MCEstimate(v, 0.0, int(N), seed)
    ens = simulate(field, pt, t, dt, N, seed, workers, record=[t])
    return _mean_estimate(f(ens.paths[:, -1, :]), seed)


def increment_moment_check(ensemble, s, t):
    """Sample E|X_t - X_s|^4 against 8 K^4 |t-s|^4 + 24 K^4 |t-s|^2."""
    if not 0 <= s <= t <= ensemble.T * (1 + 1e-12):
        raise DomainError("need 0 <= s <= t <= T")
    d = ensemble.at(t) - ensemble.at(s)
    q = np.sum(d * d, axis=1) ** 2
    lhs = float(np.mean(q))
    K = ensemble.field.K
    h = t - s
    bound = 8 * K ** 4 * h ** 4 + 24 * K ** 4 * h ** 2
    se = float(np.std(q, ddof=1) / np.sqrt(q.size)) if q.size > 1 else 0.0
    rel = se / lhs if lhs > 0 else 0.0
    return {"lhs": lhs, "bound": bound, "std_error": se,
            "pass": bool(lhs <= bound * (1 + 5 * rel))}


def estimate_fdd(field, payoffs, times, x0, dt, N, seed=0, workers=1, T=None):
    """E[prod_i f_i(X_{t_i})] along single trajectories."""
    if len(payoffs) < 1 or len(payoffs) != len(times):
        raise DomainError("need one payoff per time, k >= 1")
    for f in payoffs:
        if not isinstance(f, Payoff) or f.sup > 1.0:
            raise DomainError("fdd payoffs must be Payoff objects with declared sup <= 1")
    times = [float(t) for t in times]
    if times[0] < 0 or any(b <= a for a, b in zip(times, times[1:])):
        raise DomainError("times must be strictly increasing and nonnegative")
    for t in times:
        _grid_index(t, dt)
    horizon = times[-1] if T is None else T
    if horizon < times[-1]:
        raise DomainError("times must not exceed T")
    if horizon == 0:
        x = as_points(x0, field.dim_state)
        prod = np.prod([f(x) for f in payoffs], axis=0)
        return _mean_estimate(np.broadcast_to(prod, (N,)), seed)
    ens = simulate(field, x0, horizon, dt, N, seed, workers, record=times)
    prod = np.ones(N)
    for f, t in zip(payoffs, times):
        prod = prod * f(ens.at(t))
    return _mean_estimate(prod, seed)


def modulus_diagnostic(ensemble, delta):
    """Quantiles (50/90/99 %) of sup_{|t-s|<=delta} |X_t - X_s| over paths.

    Uses the recorded steps, which must be contiguous from 0.
    """
    if delta < ensemble.dt * (1 - 1e-12):
        raise DomainError("delta must be at least dt")
    rec = ensemble.record_steps
    if not np.array_equal(rec, np.arange(rec.size)):
        raise DomainError("modulus needs every step recorded")
    lag = int(np.floor(delta / ensemble.dt + 1e-9))
    P = ensemble.paths
    worst = np.zeros(P.shape[0])
    for k in range(1, min(lag, P.shape[1] - 1) + 1):
        d = np.linalg.norm(P[:, k:, :] - P[:, :-k, :], axis=2).max(axis=1)
        worst = np.maximum(worst, d)
    q = np.quantile(worst, [0.5, 0.9, 0.99])
    return {"delta": float(delta), "q50": float(q[0]), "q90": float(q[1]), "q99": float(q[2])}
