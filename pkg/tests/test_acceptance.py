"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line."""

import time

import numpy as np
import pytest

from oracles import HEAT_FDD_TANH, gauss_conv_gaussian, gaussian_fdd
from zeronoise import coeffs as C
from zeronoise import experiments as E
from zeronoise import payoffs as P
from zeronoise.cli import main
from zeronoise.errors import DomainError
from zeronoise.kolmogorov_fd import GridSpec, eps_sweep, solve
from zeronoise.mc_engine import estimate_u, increment_moment_check, simulate
from zeronoise.viscosity_lab import supersolution_neighborhood

pytestmark = pytest.mark.acceptance

RESULTS = {}
SWEEP_EPS = [0.2, 0.1, 0.05, 0.025]


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def test_criterion_01_heat_oracle():
    t0 = time.perf_counter()
    fld = C.constant_heat(np.sqrt(2.0))
    g = GridSpec.for_fields([(-8, 8)], 0.04, 1.0, [fld], slices=4)
    lat = solve(fld, P.gaussian(), g)
    x = g.axes[0]
    win = np.abs(x) <= 3
    err = max(float(np.max(np.abs(lat.slice_at(t) - gauss_conv_gaussian(x, t))[win]))
              for t in (0.25, 0.5, 1.0))
    el = time.perf_counter() - t0
    record(1, err <= 2e-3 and el < 30, f"sup error {err:.2e} (<= 2e-3), {el:.1f} s (< 30 s)")


def test_criterion_02_mc_fd():
    t0 = time.perf_counter()
    p = E.get_problem("peano_0.5")
    fe = C.perturb(p.family, 0.1)
    g = GridSpec.for_fields(p.box, 0.01, 0.5, [fe], slices=10)
    lat = solve(fe, P.tanh(), g)
    worst = -np.inf
    for j, x in enumerate(p.probe_points):
        est = estimate_u(fe, P.tanh(), x, 0.5, 1e-3, 100_000, seed=100 + j, workers=4)
        fd = lat.probe(x, 0.5)[0]
        worst = max(worst, abs(est.value - fd) - 3 * est.std_error - 2e-2)
    el = time.perf_counter() - t0
    record(2, worst <= 0 and el < 60,
           f"max(|MC-FD| - 3se - 2e-2) = {worst:.2e} (<= 0), {el:.1f} s (< 60 s)")


def test_criterion_03_tightness():
    rng = np.random.default_rng(3)
    fails, total = [], 0
    for tag, p in sorted(E.catalog().items()):
        for i, e in enumerate([0.2, 0.1, 0.05]):
            fe = C.perturb(p.family, e)
            dt = p.T / round(p.T / 2e-3)
            ens = simulate(fe, np.asarray(p.x0), p.T, dt, 10_000, seed=1000 + 10 * i + len(tag), workers=4)
            for _ in range(20):
                a, b = sorted(rng.choice(ens.n_steps + 1, 2, replace=False))
                c = increment_moment_check(ens, ens.times[a], ens.times[b])
                total += 1
                if not c["pass"]:
                    fails.append((tag, e, c["lhs"], c["bound"]))
    record(3, not fails, f"{total - len(fails)}/{total} moment checks within bound")


def test_criterion_04_cauchy():
    t0 = time.perf_counter()
    out = []
    ok = True
    for tag, h in (("peano_0.5", 0.005), ("cubic", 0.02)):
        p = E.get_problem(tag)
        g = p.grid(SWEEP_EPS[0], h=h, slices=15)
        rep = eps_sweep(p.family, P.tanh(), SWEEP_EPS, g, p.window)
        ok &= rep.columns_decreasing and rep.increments[-1] < 0.05
        out.append(f"{tag}: columns decreasing {rep.columns_decreasing}, final {rep.increments[-1]:.4f}")
    el = time.perf_counter() - t0
    ok &= el < 300
    record(4, ok, "; ".join(out) + f"; {el:.1f} s")


def _catalog_grids(eps=0.05):
    for tag, p in sorted(E.catalog().items()):
        g = p.grid(0.2, slices=10)
        yield tag, p, C.perturb(p.family, eps), g


def test_criterion_05_max_principle_comparison():
    bad = 0
    checks = 0
    for tag, p, fe, g in _catalog_grids():
        x = g.nodes
        pays = [f(x) for f in p.payoff_set]
        for k in range(5):
            f1 = pays[k]
            f2 = np.maximum(f1, pays[(k + 1) % 5])
            u1, u2 = solve(fe, f1, g).values, solve(fe, f2, g).values
            bad += int(np.sum((u1 < f1.min()) | (u1 > f1.max())))
            bad += int(np.sum(u1 > u2))
            checks += 1
    record(5, bad == 0, f"{bad} nodewise violations over {checks} ordered pairs")


def test_criterion_06_linearity():
    worst = 0.0
    for tag, p, fe, g in _catalog_grids():
        x = g.nodes
        for k in range(5):
            a, b = p.payoff_set[k](x), p.payoff_set[(k + 1) % 5](x)
            r = solve(fe, a + b, g).values - solve(fe, a, g).values - solve(fe, b, g).values
            worst = max(worst, float(np.max(np.abs(r))) / (np.max(np.abs(a)) + np.max(np.abs(b))))
    record(6, worst <= 1e-10, f"max relative defect {worst:.2e} (<= 1e-10)")


def test_criterion_07_supersolution():
    t0 = time.perf_counter()
    fld = C.power(0.5, 0.75)
    cert = supersolution_neighborhood(fld, [0.0], K=1.0, gamma=0.81, theta_list=(1e-2, 1e-3, 1e-4),
                                      xi=1e-3, num_points=10_000)
    el = time.perf_counter() - t0
    try:
        supersolution_neighborhood(fld, [0.0], gamma=0.4)
        refused = False
    except DomainError:
        refused = True
    ok = cert.r_certified >= 0.05 and el < 10 and refused
    record(7, ok, f"r_certified {cert.r_certified:.3g} (>= 0.05), refusal at gamma 0.4 {refused}, "
                  f"{el:.1f} s")


def test_criterion_08_counterexample():
    flags = {}
    t = 0.5
    for tag, p in sorted(E.catalog().items()):
        if tag == "heat":
            continue
        g = p.grid(0.1, slices=10, T=t)
        rep = eps_sweep(p.family, P.tanh(), [0.1, 0.05, 0.025], g, p.window)
        rows = E.feller_jump(rep, p.field, P.tanh(), t)
        flags[tag] = any(r["flag"] for r in rows)
        if tag == "counterexample":
            jumps, thr = rows[0]["jumps"], rows[0]["threshold"]
    heat = E.get_problem("heat")
    g = GridSpec.for_fields(heat.box, 0.01, t, [C.perturb(heat.family, 0.1)], slices=10)
    i = int(np.argmin(np.abs(g.axes[0])))
    base = max(abs(u[i + 1] - u[i - 1]) for u in
               (solve(C.perturb(heat.family, e), P.tanh(), g).slice_at(t) for e in (0.1, 0.05, 0.025)))
    ok = flags["counterexample"] and not any(v for k, v in flags.items() if k != "counterexample")
    ok &= jumps[-1] > thr and base < 0.02
    record(8, ok, f"counterexample jumps {np.round(jumps, 4).tolist()} vs {thr:.4f}; "
                  f"heat modulus {base:.4f} (< 0.02); flagged {sorted(k for k, v in flags.items() if v)}")


def test_criterion_09_fdd():
    times = [0.25, 0.5, 0.75]
    heat = E.fdd_convergence(E.get_problem("heat"), [P.tanh()] * 3, times, [0.1, 0.05, 0.025],
                             100_000, seed=21, workers=4)
    z = [abs(r["value"] - HEAT_FDD_TANH[r["eps"]]) / r["std_error"] for r in heat["rows"]]
    for e, v in HEAT_FDD_TANH.items():
        assert gaussian_fdd(0.5, 2 + e, times) == pytest.approx(v, abs=1e-12)
    peano = E.fdd_convergence(E.get_problem("peano_0.5"), [P.tanh()] * 3, times, SWEEP_EPS,
                              100_000, seed=22, workers=4)
    last = peano["diffs"][-1]
    ok = max(z) <= 3 and last["inside"]
    ratios = [round(d["diff"] / d["band"], 1) for d in peano["diffs"]]
    record(9, ok, f"heat max z {max(z):.2f} (<= 3); peano last diff {last['diff']:.2e} "
                  f"vs band {last['band']:.2e}; diff/band per step {ratios}")


def test_criterion_10_symmetry():
    out = E.splitting_probability(E.get_problem("counterexample"), [0.1, 0.05, 0.025], 0.5, 1e-3,
                                  100_000, seed=31, workers=4)
    z = [abs(r["p"] - 0.5) / r["std_error"] for r in out["rows"]]
    record(10, out["odd"] and all(r["symmetric_ok"] for r in out["rows"]),
           f"|p - 0.5| / se = {np.round(z, 2).tolist()} (<= 3)")


CONFIG = """
[problem]
tag = heat

[schedule]
eps = 0.2, 0.1, 0.05

[grid]
h = 0.04
slices = 20

[mc]
N = 5000
seed = 2024

[output]
dir = {out}
"""


def test_criterion_11_determinism(tmp_path):
    outs = []
    for w in (1, 4):
        out = tmp_path / f"w{w}"
        cfg = tmp_path / f"w{w}.ini"
        cfg.write_text(CONFIG.format(out=out))
        assert main(["run", str(cfg), "--workers", str(w)]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = [n for n in names if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    record(11, len(names) == 7 and same == names, f"{len(same)}/{len(names)} CSV files byte-identical")
