"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 a verification check missed its tolerance.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import analytic, eigen, solver, transform
from .analytic import QuadratureError, SamplingError
from .config import Config, ConfigError, parse_config
from .hgeom import GridError, GroupPoint, NonFiniteFieldError

RUN_HEADER = ["t", "dt", "sup_norm", "mass", "J_theta", "y_lambda", "clamp_l1"]
SWEEP_HEADER = ["m_or_q", "sigma_or_p", "amplitude", "classification", "t_blow", "t_max_reached", "sup_final"]
VERIFY_HEADER = ["check_name", "target", "measured", "tolerance", "pass"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(header, rows, cfg: Config | None) -> str:
    buf = io.StringIO()
    if cfg is not None:
        for line in cfg.echo().splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepPlan:
    config: Config
    a_values: tuple
    b_values: tuple
    amplitudes: tuple
    master_seed: int = 0
    parallelism: int = 1

    @classmethod
    def from_config(cls, cfg: Config, master_seed: int = 0, parallelism: int = 1) -> "SweepPlan":
        v = cfg.values
        porous = v["equation.family"] == solver.POROUS
        a = v["sweep.a_values"] or ((v["equation.m"] if porous else v["equation.q"]),)
        b = v["sweep.b_values"] or ((v["equation.sigma"] if porous else v["equation.p"]),)
        amps = v["sweep.amplitudes"] or (v["initial.amplitude"],)
        if parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        return cls(cfg, tuple(a), tuple(b), tuple(amps), master_seed, parallelism)

    def tasks(self) -> list:
        return sorted((a, b, amp) for a in self.a_values for b in self.b_values for amp in self.amplitudes)

    def __len__(self):
        return len(self.a_values) * len(self.b_values) * len(self.amplitudes)


def run_seed(master_seed: int, key: tuple) -> int:
    """Stable per-run seed from the master seed and the parameter tuple."""
    text = repr((int(master_seed),) + tuple(float(k) for k in key)).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")


def _sweep_one(args):
    text, (a, b, amp) = args
    cfg = parse_config(text)
    try:
        rec = solver.run(cfg.params(a, b), cfg.initial(amp), cfg.grid(), cfg.control())
        return (a, b, amp, rec.classification, rec.t_star, rec.t_max_reached, rec.sup_final)
    except Exception as exc:  # a failed child is recorded, siblings continue
        return (a, b, amp, f"{solver.FAILED}: {type(exc).__name__}", None, None, None)


def sweep(plan: SweepPlan) -> tuple:
    """Run every task and return (csv text, rows), rows in sorted parameter order."""
    text = plan.config.echo()
    jobs = [(text, t) for t in plan.tasks()]
    if plan.parallelism == 1 or len(jobs) == 1:
        rows = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=plan.parallelism) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    rows.sort(key=lambda r: r[:3])
    return write_csv(SWEEP_HEADER, rows, plan.config), rows


# ---------------------------------------------------------------------------
# verification suites


def _check(name, target, measured, tol, passed):
    return (name, target, measured, tol, bool(passed))


def verify_lemmas(samples: int, seed: int, box: float = 4.0) -> list:
    rows = []
    for eps in (0.5, 1.0, 2.0):
        for A in (0.5, 1.0):
            rep = analytic.theta_bound_check(analytic.ThetaSpec(eps, A), box, samples, seed,
                                             raise_on_violation=False)
            rows.append(_check(f"theta_bound_eps{eps}_A{A}", 0, len(rep.violations), 0, rep.ok))
    eps1 = 1.0 / (4.0 * (2.0 + 4))
    rep = analytic.theta_bound_check(analytic.ThetaSpec(eps1, 1.0), box, samples, seed,
                                     bound_constant=0.5, raise_on_violation=False)
    rows.append(_check("theta1_half_bound", 0, len(rep.violations), 0, rep.ok))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for eps in (0.5, 1.0, 2.0):
        for A in (0.5, 1.0):
            spec = analytic.ThetaSpec(eps, A)
            pts = GroupPoint.from_coords(rng.uniform(-box, box, (min(samples, 20000), 3)))
            _, closed = analytic.theta_eval(spec, pts)
            jet = analytic.d_h_exact(analytic.theta_jet(spec, pts), pts)
            scale = np.maximum(np.abs(closed), np.abs(analytic.theta_value(spec, pts)))
            ok = scale > 0
            worst = max(worst, float(np.max(np.abs(closed - jet)[ok] / scale[ok])))
    rows.append(_check("theta_closed_vs_jet", 0, worst, 1e-9, worst <= 1e-9))
    worst = 0.0
    for _ in range(1000):
        u = analytic.Polynomial.random(rng, degree=3)
        v = analytic.Polynomial.random(rng, degree=3)
        pts = GroupPoint.from_coords(rng.uniform(-2, 2, (1, 3)))
        worst = max(worst, analytic.product_rule_defect(u, v, pts, relative=True))
    rows.append(_check("product_rule", 0, worst, 1e-8, worst <= 1e-8))
    return rows


def verify_scaling() -> list:
    rows = []
    lap, grad = analytic.cutoff_scaling_report(4.0, [4, 8, 16, 32])
    for rep in (lap, grad):
        rows.append(_check(f"cutoff_slope_{'laplacian' if rep is lap else 'gradient'}",
                           rep.target_slope, rep.fitted_slope, rep.slope_tolerance, rep.ok))
    for m, s in ((1.0, 1.25), (1.5, 1.75), (1.0, 1.5)):
        j1, j2 = analytic.capacity_scaling_report(m, s, None, [2, 4, 8, 16])
        if s != 1.5:
            rows.append(_check(f"capacity_J1_m{m}_s{s}", j1.target_slope, j1.fitted_slope, j1.slope_tolerance, j1.ok))
        rows.append(_check(f"capacity_J2_m{m}_s{s}", j2.target_slope, j2.fitted_slope, j2.slope_tolerance, j2.ok))
    return rows


def verify_transform() -> list:
    rows = []
    worst = 0.0
    for q in np.linspace(0.0, 0.9, 10):
        for p in (1.5, 2.0, 2.5, 4.0):
            tp = transform.map_params(q, p)
            r = 1.0 - q
            for got, want in ((tp.a ** (p - 1), r**r), (tp.b**2, r ** ((p - 1 - q) / (p - 1))),
                              (tp.sigma - tp.m, (p - 1 - q) / r)):
                worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    rows.append(_check("parameter_identities", 0, worst, 1e-14, worst <= 1e-14))
    worst = 0.0
    for q in np.linspace(0.0, 0.9, 10):
        tp = transform.map_params(q, transform.critical_p(q, 4))
        worst = max(worst, abs(tp.sigma - (tp.m + 0.5)))
    rows.append(_check("critical_line", 0, worst, 1e-14, worst <= 1e-14))
    tp = transform.map_params(0.5, 2.0)
    for name, want, got in (("m", 2.0, tp.m), ("sigma", 3.0, tp.sigma),
                            ("a", 0.5**0.5, tp.a), ("b", 0.5**0.25, tp.b)):
        rows.append(_check(f"q0.5_p2_{name}", want, got, 1e-12, abs(want - got) <= 1e-12))
    return rows


def eigen_rows(cfg: Config) -> list:
    R = cfg["eigen.radius"]
    pair = eigen.principal_eigenpair(R, eigen.ball_grid(R, cfg["eigen.nx"], n=cfg["grid.n"]), cfg["eigen.tol"])
    hopf = eigen.hopf_boundary_check(pair)
    integral = pair.Lambda.integral()
    return [
        _check("lambda1", 0, pair.lambda1, 0, pair.lambda1 > 0),
        _check("eigen_residual", 0, pair.residual, cfg["eigen.tol"], pair.residual <= cfg["eigen.tol"]),
        _check("lambda_integral", 1, integral, 1e-6, abs(integral - 1) <= 1e-6),
        _check("hopf_violations", 0, hopf.violations, 0, hopf.ok),
        _check("hopf_min_inward_slope", 0, hopf.min_inward_slope, 1e-12, hopf.min_inward_slope >= -1e-12),
    ]


# ---------------------------------------------------------------------------
# entry point


def _build_parser():
    p = _Parser(prog="hfujita", description="Blow-up and Fujita-exponent experiments on the Heisenberg group")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("verify-lemmas", "verify-scaling", "eigen", "run", "sweep", "transform-check"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="key = value configuration file")
        s.add_argument("--set", action="append", default=[], metavar="section.key=value")
        s.add_argument("--out", help="output CSV (default stdout)")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--parallel", type=int, default=1)
        if name == "verify-lemmas":
            s.add_argument("--samples", type=int)
    return p


def _load_config(args) -> Config:
    text = ""
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    cfg = parse_config(text)
    if args.set:
        cfg = cfg.with_overrides([s.replace("=", " = ", 1) for s in args.set])
    return cfg


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def execute(argv) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = _load_config(args)
        if args.parallel < 1:
            raise ConfigError("--parallel must be >= 1")
    except (UsageError, ConfigError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _dispatch(args, cfg)
    except (ConfigError, GridError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (eigen.EigenConvergenceError, eigen.EigenSignError, QuadratureError, SamplingError,
            NonFiniteFieldError, solver.StepUnderflow) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _dispatch(args, cfg: Config) -> int:
    cmd = args.command
    if cmd in ("verify-lemmas", "verify-scaling", "transform-check", "eigen"):
        if cmd == "verify-lemmas":
            samples = args.samples if args.samples is not None else cfg["verify.samples"]
            if samples < 1:
                raise ConfigError("--samples must be >= 1")
            rows = verify_lemmas(samples, args.seed, cfg["verify.box"])
        elif cmd == "verify-scaling":
            rows = verify_scaling()
        elif cmd == "transform-check":
            rows = verify_transform()
        else:
            rows = eigen_rows(cfg)
        _emit(write_csv(VERIFY_HEADER, rows, cfg), args.out)
        return EXIT_OK if all(r[-1] for r in rows) else EXIT_VERIFY
    if cmd == "run":
        pair = None
        grid = cfg.grid()
        if cfg["eigen.attach"]:
            R = cfg["eigen.radius"]
            pair = eigen.principal_eigenpair(R, grid.with_policy(eigen.BALL_MASK, R), cfg["eigen.tol"])
        rec = solver.run(cfg.params(), cfg.initial(), grid, cfg.control(), eigenpair=pair)
        rows = [(r.t, r.dt, r.sup_norm, r.mass, r.J_theta, r.y_lambda, r.clamp_l1) for r in rec.rows]
        _emit(write_csv(RUN_HEADER, rows, cfg), args.out)
        if rec.classification == solver.FAILED:
            print(f"numerical failure: {rec.reason}", file=sys.stderr)
            return EXIT_NUMERIC
        return EXIT_OK
    if cmd == "sweep":
        plan = SweepPlan.from_config(cfg, args.seed, args.parallel)
        text, rows = sweep(plan)
        _emit(text, args.out)
        return EXIT_NUMERIC if any(str(r[3]).startswith(solver.FAILED) for r in rows) else EXIT_OK
    raise UsageError(f"unknown command {cmd}")


def main():
    sys.exit(execute(sys.argv[1:]))


if __name__ == "__main__":
    main()
