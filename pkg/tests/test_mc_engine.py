import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import BM_FDD_TANH, CUBIC_TANH, cubic_strong, gauss_conv_gaussian, gaussian_fdd, levy_modulus
from zeronoise import coeffs as C
from zeronoise import payoffs as P
from zeronoise.errors import DomainError
from zeronoise.mc_engine import (estimate_fdd, estimate_u, increment_moment_check,
                                 modulus_diagnostic, simulate)


def const(b0, s0):
    return C.constant_drift(b0, s0)


# simulate -----------------------------------------------------------------

def test_zero_dynamics_constant_paths():
    ens = simulate(const(0.0, 0.0), 0.5, 1.0, 0.1, 50, seed=1)
    assert np.all(ens.paths == 0.5)


def test_constant_drift_reaches_one():
    ens = simulate(const(1.0, 0.0), 0.0, 1.0, 0.01, 20, seed=1)
    assert np.all(np.abs(ens.paths[:, -1, 0] - 1.0) <= 0.01)
    assert np.all(ens.paths[:, 0, 0] == 0.0)


def test_brownian_variance():
    N = 100_000
    ens = simulate(const(0.0, 1.0), 0.0, 1.0, 0.01, N, seed=11, record=[1.0])
    v = np.var(ens.paths[:, -1, 0], ddof=1)
    assert abs(v - 1.0) <= 3 * np.sqrt(2 / N)


def test_grid_of_starts():
    starts = np.linspace(-1, 1, 7).reshape(-1, 1)
    ens = simulate(C.cubic(), starts, 0.1, 0.01, 7, seed=0)
    np.testing.assert_array_equal(ens.paths[:, 0, :], starts)


def test_increment_bound_pathwise():
    fld = C.perturb(C.PerturbationFamily(C.cubic()), 0.1)
    dt = 0.01
    ens = simulate(fld, 0.3, 0.5, dt, 300, seed=5)
    from zeronoise.rng import standard_normals
    for k in range(ens.paths.shape[1] - 1):
        z = standard_normals(5, k, 0, 300, fld.dim_noise)
        step = np.abs(ens.paths[:, k + 1, 0] - ens.paths[:, k, 0])
        bound = fld.sup_b * dt + fld.sup_sigma * np.linalg.norm(z, axis=1) * np.sqrt(dt)
        assert np.all(step <= bound * (1 + 1e-12))


@pytest.mark.parametrize("dt,N", [(0.0, 10), (-0.1, 10), (0.1, 0)])
def test_simulate_rejects(dt, N):
    with pytest.raises(DomainError):
        simulate(const(0.0, 1.0), 0.0, 1.0, dt, N)


def test_seed_determinism_across_workers():
    fld = C.perturb(C.PerturbationFamily(C.peano_alpha(0.5)), 0.05)
    a = simulate(fld, 0.0, 0.2, 0.01, 9000, seed=3, workers=1)
    b = simulate(fld, 0.0, 0.2, 0.01, 9000, seed=3, workers=3)
    assert np.array_equal(a.paths, b.paths)
    c = simulate(fld, 0.0, 0.2, 0.01, 9000, seed=4)
    assert not np.array_equal(a.paths, c.paths)


def test_paths_read_only():
    ens = simulate(const(0.0, 1.0), 0.0, 0.1, 0.01, 5)
    with pytest.raises(ValueError):
        ens.paths[0, 0, 0] = 1.0


# estimate_u ---------------------------------------------------------------

def test_frozen_dynamics_sine():
    est = estimate_u(const(0.0, 0.0), P.sine(), 0.3, 1.0, 0.1, 100)
    assert est.value == pytest.approx(np.sin(0.3), abs=1e-15)
    assert est.value == pytest.approx(0.29552, abs=5e-6)
    assert est.std_error == 0.0


def test_heat_gaussian_oracle():
    est = estimate_u(C.constant_heat(np.sqrt(2.0)), P.gaussian(), 0.0, 0.5, 0.01, 100_000, seed=2)
    exact = gauss_conv_gaussian(0.0, 0.5)
    assert exact == pytest.approx(1 / np.sqrt(3))
    assert est.within(exact, 3)


def test_cubic_strong_solution_oracle():
    assert cubic_strong(1.0, 0.25, n=200) == pytest.approx(CUBIC_TANH, abs=1e-8)
    # a large clipping level keeps paths in the unclipped region with overwhelming probability
    est = estimate_u(C.cubic(27.0), P.tanh(), 1.0, 0.25, 1e-3, 100_000, seed=3)
    assert est.within(CUBIC_TANH, 3)


def test_negative_time_rejected():
    with pytest.raises(DomainError):
        estimate_u(const(0.0, 1.0), P.tanh(), 0.0, -0.1, 0.01, 10)


@settings(max_examples=15, deadline=None)
@given(x=st.floats(-2, 2), seed=st.integers(0, 2**32), tag=st.sampled_from(["tanh", "sin", "step"]))
def test_estimate_within_payoff_range(x, seed, tag):
    f = P.by_tag(tag)
    fld = C.perturb(C.PerturbationFamily(C.signed_sqrt()), 0.05)
    est = estimate_u(fld, f, x, 0.2, 0.02, 64, seed)
    ens = simulate(fld, x, 0.2, 0.02, 64, seed, record=[0.2])
    vals = f(ens.paths[:, -1, :])
    assert vals.min() <= est.value <= vals.max()
    assert abs(est.value) <= f.sup


def test_time_regularity():
    fld = C.constant_heat(np.sqrt(2.0))
    f = P.tanh()
    rng = np.random.default_rng(0)
    bad = 0
    pairs = [tuple(sorted(rng.choice(np.arange(1, 21) * 0.05, 2, replace=False))) for _ in range(15)]
    for s, t in pairs:
        a = estimate_u(fld, f, 0.3, s, 0.01, 4000, seed=9)
        b = estimate_u(fld, f, 0.3, t, 0.01, 4000, seed=9)
        if abs(a.value - b.value) > fld.K * (t - s) + 5 * np.hypot(a.std_error, b.std_error):
            bad += 1
    assert bad == 0


# increment_moment_check ---------------------------------------------------

def test_moment_bound_value():
    ens = simulate(const(1.0, 0.0), 0.0, 1.0, 0.1, 10)
    res = increment_moment_check(ens, 0.2, 0.3)
    assert res["bound"] == pytest.approx(8e-4 + 0.24)
    assert res["bound"] == pytest.approx(0.2408)


def test_moment_zero_paths():
    ens = simulate(const(0.0, 0.0), 1.0, 1.0, 0.1, 10)
    res = increment_moment_check(ens, 0.0, 0.5)
    assert res["lhs"] == 0.0 and res["pass"]


def test_moment_brownian():
    N = 100_000
    ens = simulate(const(0.0, 1.0), 0.0, 0.3, 0.01, N, seed=21, record=[0.1, 0.2])
    res = increment_moment_check(ens, 0.1, 0.2)
    assert abs(res["lhs"] - 3 * 0.1 ** 2) <= 4 * res["std_error"]
    assert res["pass"] and res["lhs"] <= res["bound"]


def test_moment_off_grid():
    ens = simulate(const(0.0, 1.0), 0.0, 1.0, 0.1, 10)
    with pytest.raises(DomainError):
        increment_moment_check(ens, 0.05, 0.3)


# estimate_fdd -------------------------------------------------------------

def test_fdd_single_time_is_estimate_u():
    fld = C.perturb(C.PerturbationFamily(C.peano_alpha(0.5)), 0.1)
    a = estimate_fdd(fld, [P.tanh()], [0.5], 0.0, 0.01, 5000, seed=8)
    b = estimate_u(fld, P.tanh(), 0.0, 0.5, 0.01, 5000, seed=8)
    assert a.value == b.value and a.std_error == b.std_error


def test_fdd_constant_one():
    one = P.constant(1.0)
    est = estimate_fdd(const(0.0, 1.0), [one] * 3, [0.1, 0.2, 0.3], 0.0, 0.01, 100, seed=0)
    assert est.value == 1.0 and est.std_error == 0.0


def test_fdd_brownian_oracle():
    times = (0.25, 0.5, 0.75)
    assert gaussian_fdd(0.0, 1.0, times) == pytest.approx(BM_FDD_TANH, abs=1e-12)
    est = estimate_fdd(const(0.0, 1.0), [P.tanh()] * 3, times, 0.0, 0.01, 100_000, seed=4)
    assert est.within(BM_FDD_TANH, 3)
    shifted = estimate_fdd(const(0.0, 1.0), [P.tanh()] * 3, times, 0.5, 0.01, 100_000, seed=4)
    assert shifted.within(gaussian_fdd(0.5, 1.0, times), 3)


def test_fdd_rejects_large_payoff():
    with pytest.raises(DomainError):
        estimate_fdd(const(0.0, 1.0), [P.constant(2.0)], [0.5], 0.0, 0.1, 10)


def test_fdd_rejects_unordered_times():
    with pytest.raises(DomainError):
        estimate_fdd(const(0.0, 1.0), [P.tanh()] * 2, [0.5, 0.2], 0.0, 0.1, 10)


# modulus_diagnostic -------------------------------------------------------

def test_modulus_zero():
    ens = simulate(const(0.0, 0.0), 0.0, 1.0, 0.01, 20)
    m = modulus_diagnostic(ens, 0.1)
    assert m["q50"] == m["q90"] == m["q99"] == 0.0


def test_modulus_linear():
    ens = simulate(const(1.0, 0.0), 0.0, 1.0, 0.01, 20)
    m = modulus_diagnostic(ens, 0.1)
    for q in ("q50", "q90", "q99"):
        assert m[q] == pytest.approx(0.1, abs=1e-12)


def test_modulus_brownian():
    ens = simulate(const(0.0, 1.0), 0.0, 1.0, 0.001, 4000, seed=3)
    mods = [modulus_diagnostic(ens, d) for d in (0.2, 0.1, 0.05, 0.01)]
    q99 = [m["q99"] for m in mods]
    assert all(np.isfinite(q99)) and all(b < a for a, b in zip(q99, q99[1:]))
    # the Levy rate is asymptotic: the median ratio approaches 1 as delta shrinks
    ratios = [m["q50"] / levy_modulus(m["delta"]) for m in mods]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert abs(ratios[-1] - 1) < 0.2


def test_modulus_delta_below_dt():
    ens = simulate(const(0.0, 1.0), 0.0, 1.0, 0.1, 5)
    with pytest.raises(DomainError):
        modulus_diagnostic(ens, 0.05)
