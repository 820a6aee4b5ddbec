"""Command-line front end driven by INI experiment files.

Exit codes: 0 success, 1 assumption failure or tolerance exceeded,
2 bad configuration or mismatched reports, 3 memory budget exceeded.
"""

import argparse
import configparser
import csv
import io
import json
import os
import re
import sys
from dataclasses import dataclass, field as dc_field, fields, replace

import numpy as np

from . import coeffs as C
from . import experiments as X
from . import payoffs as P
from .errors import DomainError
from .io import atomic_write
from .kolmogorov_fd import GridSpec, eps_sweep

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MEMORY = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "ZERONOISE_OUTPUT_ROOT"
DEFAULT_BUDGET = 2 * 1024 ** 3

CSV_SCHEMA = {
    "cauchy.csv": ["eps_i", "eps_j", "sup_diff"],
    "probes.csv": ["experiment", "eps", "x", "t", "value"],
    "mc_fd.csv": ["experiment", "eps", "x", "t", "fd", "mc", "std_error", "N", "seed", "ok"],
    "fdd.csv": ["experiment", "eps", "t1", "t2", "t3", "value", "std_error", "N", "seed"],
    "feller.csv": ["experiment", "eps", "t", "window_modulus"],
    "jumps.csv": ["experiment", "x_star", "t", "eps", "jump", "threshold", "flag"],
    "tightness.csv": ["experiment", "eps", "s", "t", "lhs", "bound", "pass"],
}


class ConfigError(Exception):
    pass


def _floats(text):
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(u) for u in v)
    if isinstance(v, dict):
        return ", ".join(f"{k}={_fmt(u)}" for k, u in sorted(v.items()))
    return str(v)


def _params(text):
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise ConfigError(f"bad parameter {part!r}")
        k, v = (s.strip() for s in part.split("=", 1))
        out[k] = float(v)
    return out


@dataclass
class ExperimentConfig:
    problem: str = "heat"
    field: str = ""
    field_params: dict = dc_field(default_factory=dict)
    x0: list = dc_field(default_factory=lambda: [0.0])
    window: list = dc_field(default_factory=list)
    waive: bool = False
    eps: list = dc_field(default_factory=lambda: [0.2, 0.1, 0.05])
    box: list = dc_field(default_factory=list)
    h: float = 0.0
    T: float = 0.0
    dt: float = 0.0
    slices: int = 20
    safety: float = 0.9
    N: int = 20000
    dt_mc: float = 1e-3
    seed: int = 0
    workers: int = 1
    payoffs: list = dc_field(default_factory=lambda: ["tanh"])
    output_dir: str = "zeronoise-out"
    formats: list = dc_field(default_factory=lambda: ["json", "csv", "md"])
    memory_budget: int = DEFAULT_BUDGET

    SECTIONS = {
        "problem": ["problem", "field", "field_params", "x0", "window", "waive"],
        "schedule": ["eps"],
        "grid": ["box", "h", "T", "dt", "slices", "safety"],
        "mc": ["N", "dt_mc", "seed", "workers"],
        "payoffs": ["payoffs"],
        "output": ["output_dir", "formats", "memory_budget"],
    }
    KEYS = {"problem": "tag", "payoffs": "tags", "output_dir": "dir"}

    @classmethod
    def parse(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        kw = {}
        types = {f.name: f for f in fields(cls)}
        for sec, names in cls.SECTIONS.items():
            if not cp.has_section(sec):
                continue
            known = {cls.KEYS.get(n, n): n for n in names}
            for key, raw in cp.items(sec):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                name = known[key]
                kw[name] = cls._convert(name, raw, types[name])
        extra = set(cp.sections()) - set(cls.SECTIONS)
        if extra:
            raise ConfigError(f"unknown sections {sorted(extra)}")
        if "seed" not in kw:
            raise ConfigError("a numeric seed is mandatory in [mc]")
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @staticmethod
    def _convert(name, raw, f):
        raw = raw.strip()
        try:
            if name in ("x0", "window", "eps", "box"):
                return _floats(raw)
            if name in ("payoffs", "formats"):
                return [s.strip() for s in raw.split(",") if s.strip()]
            if name == "field_params":
                return _params(raw)
            if name == "waive":
                if raw.lower() not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(raw)
                return raw.lower() in ("true", "yes", "1")
            if name in ("slices", "N", "seed", "workers", "memory_budget"):
                return int(raw)
            if name in ("h", "T", "dt", "safety", "dt_mc"):
                return float(raw)
            return raw
        except ValueError:
            raise ConfigError(f"cannot parse {name} = {raw!r}") from None

    def validate(self):
        if not self.eps or any(e <= 0 for e in self.eps):
            raise ConfigError("eps schedule must be positive")
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ConfigError("eps schedule must be strictly decreasing")
        if self.N < 1 or self.workers < 1 or self.slices < 1 or self.dt_mc <= 0:
            raise ConfigError("N, workers, slices and dt_mc must be positive")
        for p in self.payoffs:
            if p not in P.BUILTIN:
                raise ConfigError(f"unknown payoff tag {p!r}")
        if self.field:
            if self.field not in C.FIELDS:
                raise ConfigError(f"unknown field tag {self.field!r}")
            if not (self.box and self.window and self.h > 0 and self.T > 0):
                raise ConfigError("inline fields need box, window, h and T")
        elif self.problem not in X.catalog():
            raise ConfigError(f"unknown problem tag {self.problem!r}")

    def serialize(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec, names in self.SECTIONS.items():
            cp.add_section(sec)
            for n in names:
                cp.set(sec, self.KEYS.get(n, n), _fmt(getattr(self, n)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def build_problem(self):
        if self.field:
            fld = C.field_by_tag(self.field, **self.field_params)
            prob = X._problem(f"inline_{self.field}", fld, self.x0, self.box, self.h, self.T,
                              self.window)
        else:
            prob = X.get_problem(self.problem)
            over = {}
            if self.box:
                over["box"] = tuple(map(tuple, np.asarray(self.box).reshape(-1, 2)))
            if self.window:
                over["window"] = tuple(map(tuple, np.asarray(self.window).reshape(-1, 2)))
            if self.h > 0:
                over["h"] = self.h
            if self.T > 0:
                over["T"] = self.T
            prob = replace(prob, **over)
        pays = tuple(P.by_tag(t) for t in self.payoffs)
        return replace(prob, payoff_set=pays)

    def provisional_grid(self, prob):
        """Grid with the final shape and slices but a placeholder dt; cheap to build."""
        return GridSpec(prob.box, prob.h, prob.T, prob.T / self.slices, "frozen_dirichlet", self.slices)

    def build_grid(self, prob):
        fam_fields = [C.perturb(prob.family, self.eps[0])]
        if self.dt > 0:
            n = int(np.ceil(prob.T / self.dt / self.slices)) * self.slices
            return GridSpec(prob.box, prob.h, prob.T, prob.T / n, "frozen_dirichlet", self.slices)
        return GridSpec.for_fields(prob.box, prob.h, prob.T, fam_fields, self.safety, self.slices)

    def out_dir(self):
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(self.output_dir):
            return os.path.join(root, self.output_dir)
        return self.output_dir


def memory_estimate(cfg, grid):
    """Bytes needed by a run: stored slices for every eps, the stencil and MC blocks."""
    nodes = grid.num_nodes
    k_nb = 2 * grid.dim + 2 * grid.dim * (grid.dim - 1)
    fd = nodes * (grid.slices + 1) * 8 * (len(cfg.eps) + 1) + nodes * k_nb * 16 + nodes * 64
    mc = min(cfg.N, 4096) * 16 * 8 * cfg.workers + cfg.N * 8 * 4
    return int(fd + mc)


# emission ------------------------------------------------------------------

def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


def _emit(out, name, text, cfg):
    ext = name.rsplit(".", 1)[-1]
    if ext in ("json", "csv", "md") and ext not in cfg.formats and name != "schema.json":
        return
    atomic_write(os.path.join(out, name), text)


def report_tables(rep):
    tag = rep.tag
    tabs = {}
    eps = rep.eps_list
    tabs["cauchy.csv"] = [(eps[i], eps[j], rep.cauchy[i][j]) for i in range(len(eps))
                          for j in range(len(eps)) if i < j]
    tabs["probes.csv"] = [(tag, eps[-1], x, p["t"], u) for p in rep.probes for x, u in zip(p["x"], p["u"])]
    tabs["mc_fd.csv"] = [(tag, r["eps"], r["x"], r["t"], r["fd"], r["mc"], r["std_error"], r["N"],
                          r["seed"], r["ok"]) for r in rep.mc_fd]
    t1, t2, t3 = rep.fdd["times"]
    tabs["fdd.csv"] = [(tag, r["eps"], t1, t2, t3, r["value"], r["std_error"], r["N"], r["seed"])
                       for r in rep.fdd["rows"]]
    tabs["feller.csv"] = [(tag, r["eps"], t, m) for r in rep.feller for t, m in zip(r["t"], r["modulus"])]
    tabs["jumps.csv"] = [(tag, j["x_star"], j["t"], e, v, j["threshold"], j["flag"])
                         for j in rep.jumps for e, v in zip(j["eps"], j["jumps"])]
    tabs["tightness.csv"] = [(tag, r["eps"], m["s"], m["t"], m["lhs"], m["bound"], m["pass"])
                             for r in rep.tightness for m in r["moments"]]
    return tabs


# commands ------------------------------------------------------------------

def _load(path):
    try:
        with open(path) as fh:
            return ExperimentConfig.parse(fh.read())
    except OSError as exc:
        raise ConfigError(str(exc)) from None


def cmd_check(cfg):
    prob = cfg.build_problem()
    reps = X.assumption_checks(prob, cfg.seed)
    if not cfg.waive:
        for r in reps:
            if r.name == "degenerate_point" and r.waived:
                r.waived = False
                r.notes.append("waiver not accepted by the configuration")
    out = cfg.out_dir()
    atomic_write(os.path.join(out, "check.json"), _json([r.as_dict() for r in reps]))
    for r in reps:
        status = "pass" if r.passed else ("waived" if r.waived else "FAIL")
        print(f"{r.name}: {status}" + (f" ({'; '.join(r.notes)})" if r.notes else ""))
    return EXIT_OK if all(r.ok for r in reps) else EXIT_FAIL


def _gate(cfg, grid):
    need = memory_estimate(cfg, grid)
    if need > cfg.memory_budget:
        print(f"memory estimate {need} bytes exceeds budget {cfg.memory_budget}", file=sys.stderr)
        return EXIT_MEMORY
    return None


def _schema(out, cfg, names):
    _emit(out, "schema.json", _json({n: CSV_SCHEMA[n] for n in names}), cfg)


def cmd_run(cfg, workers=None):
    prob = cfg.build_problem()
    if cmd_check_silent(cfg, prob) != EXIT_OK:
        print("assumption checks failed and no waiver accepted", file=sys.stderr)
        return EXIT_FAIL
    gate = _gate(cfg, cfg.provisional_grid(prob))
    if gate is not None:
        return gate
    grid = cfg.build_grid(prob)
    rep = X.run_selection(prob, cfg.eps, grid, cfg.N, cfg.seed, cfg.dt_mc,
                          workers or cfg.workers, payoff=prob.payoff_set[0])
    out = cfg.out_dir()
    _emit(out, "report.json", _json(rep.as_dict()), cfg)
    _emit(out, "report.md", rep.markdown(), cfg)
    tabs = report_tables(rep)
    for name, rows in tabs.items():
        _emit(out, name, _csv(rows, CSV_SCHEMA[name]), cfg)
    _schema(out, cfg, tabs)
    for k, v in sorted(rep.flags.items()):
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_check_silent(cfg, prob):
    reps = X.assumption_checks(prob, cfg.seed)
    ok = all(r.passed or (r.waived and (cfg.waive or r.name != "degenerate_point")) for r in reps)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(cfg):
    prob = cfg.build_problem()
    gate = _gate(cfg, cfg.provisional_grid(prob))
    if gate is not None:
        return gate
    grid = cfg.build_grid(prob)
    sw = eps_sweep(prob.family, prob.payoff_set[0], cfg.eps, grid, prob.window)
    out = cfg.out_dir()
    _emit(out, "sweep.json", _json(sw.as_dict()), cfg)
    rows = []
    for e, s in zip(sw.eps_list, sw.solutions):
        for t in prob.probe_times:
            t = X._snap_slice(grid, t)
            rows += [(prob.tag, e, x, t, u) for x, u in zip(prob.probe_points, s.probe(prob.probe_points, t))]
    _emit(out, "probes.csv", _csv(rows, CSV_SCHEMA["probes.csv"]), cfg)
    _schema(out, cfg, ["probes.csv"])
    print(f"increments: {sw.increments}; converging: {sw.converging}")
    return EXIT_OK if sw.converging else EXIT_FAIL


def cmd_fdd(cfg, workers=None):
    prob = cfg.build_problem()
    times = [X._snap(t, cfg.dt_mc) for t in prob.probe_times]
    pays = [P.by_tag(cfg.payoffs[i % len(cfg.payoffs)]) for i in range(3)]
    res = X.fdd_convergence(prob, pays, times, cfg.eps, cfg.N, cfg.seed, cfg.dt_mc, workers or cfg.workers)
    out = cfg.out_dir()
    _emit(out, "fdd.json", _json(res), cfg)
    rows = [(prob.tag, r["eps"], *times, r["value"], r["std_error"], r["N"], r["seed"]) for r in res["rows"]]
    _emit(out, "fdd.csv", _csv(rows, CSV_SCHEMA["fdd.csv"]), cfg)
    _schema(out, cfg, ["fdd.csv"])
    print(f"converging: {res['converging']}")
    return EXIT_OK if res["converging"] else EXIT_FAIL


def cmd_compare(path_a, path_b, tol=1e-6, sigma=None):
    try:
        with open(path_a) as fa, open(path_b) as fb:
            a, b = json.load(fa), json.load(fb)
    except (OSError, ValueError) as exc:
        print(f"cannot read reports: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if a.get("tag") != b.get("tag"):
        print("reports describe different problems", file=sys.stderr)
        return EXIT_CONFIG
    pa, pb = a.get("probes", []), b.get("probes", [])
    keys_a = [(round(p["t"], 12), tuple(round(x, 12) for x in p["x"])) for p in pa]
    keys_b = [(round(p["t"], 12), tuple(round(x, 12) for x in p["x"])) for p in pb]
    if keys_a != keys_b:
        print("probe sets differ", file=sys.stderr)
        return EXIT_CONFIG
    worst = 0.0
    for p, q in zip(pa, pb):
        worst = max(worst, float(np.max(np.abs(np.subtract(p["u"], q["u"])))) if p["u"] else 0.0)
    ok = worst <= tol
    if sigma is not None:
        ma, mb = a.get("mc_fd", []), b.get("mc_fd", [])
        if [(r["x"], r["t"]) for r in ma] != [(r["x"], r["t"]) for r in mb]:
            print("MC probe sets differ", file=sys.stderr)
            return EXIT_CONFIG
        for r, s in zip(ma, mb):
            if abs(r["mc"] - s["mc"]) > sigma * float(np.hypot(r["std_error"], s["std_error"])) + tol:
                ok = False
    print(f"max probe difference {worst:.6g}; within tolerance: {ok}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_catalog(as_json=False):
    cat = X.catalog()
    rows = [{"tag": p.tag, "field": p.field.tag, "params": p.field.params, "x0": list(p.x0),
             "box": [list(b) for b in p.box], "h": p.h, "T": p.T,
             "window": [list(w) for w in p.window], "waiver": p.waiver, "notes": p.notes}
            for p in cat.values()]
    if as_json:
        print(_json(rows), end="")
    else:
        for r in rows:
            w = " [waiver]" if r["waiver"] else ""
            print(f"{r['tag']}: {r['notes']}{w}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="zeronoise", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("check", "run", "sweep", "fdd"):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        if name in ("run", "fdd"):
            sp.add_argument("--workers", type=int, default=None)
    cp = sub.add_parser("compare")
    cp.add_argument("report_a")
    cp.add_argument("report_b")
    cp.add_argument("--tol", type=float, default=1e-6)
    cp.add_argument("--sigma", type=float, default=None,
                    help="also compare MC values within this many combined std errors")
    cat = sub.add_parser("catalog")
    cat.add_argument("--json", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "catalog":
            return cmd_catalog(args.json)
        if args.command == "compare":
            return cmd_compare(args.report_a, args.report_b, args.tol, args.sigma)
        cfg = _load(args.config)
        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "run":
            return cmd_run(cfg, args.workers)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_fdd(cfg, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
