"""Explicit adaptive time stepping for

    porous medium:  v_t = Delta_H(v^m) + v^sigma
    degenerate:     u_t = u^q Delta_H u + u^p

on a zero-Dirichlet box, with blow-up detection, diagnostics, the weak-form
residual, the eigenfunction (Kaplan) inequality and the ODE lifespan bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numba
import numpy as np

from .analytic import CutoffSpec, ThetaSpec, cutoff_jet, theta_mass, theta_value, time_cutoff
from .hgeom import (DIRICHLET_ZERO, GroupDims, GroupPoint, NonFiniteFieldError, ScalarField, UniformGrid,
                    apply_d_h, d_h_exact)

POROUS = "porous_medium"
DEGENERATE = "degenerate"

BLOW_UP = "blow_up"
DECAYING = "no_blowup_decaying"
BY_HORIZON = "no_blowup_by_horizon"
FAILED = "failed"


class StepUnderflow(RuntimeError):
    pass


class GridMismatch(ValueError):
    pass


class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class PdeParams:
    """``a``/``b`` are (m, sigma) for the porous medium equation and (q, p)
    for the degenerate one.  ``reaction=False`` drops the power source."""

    equation: str
    a: float
    b: float
    dims: GroupDims = GroupDims(1)
    reaction: bool = True

    def __post_init__(self):
        if self.equation == POROUS:
            if not (self.a >= 1 and self.b > 1):
                raise ValueError(f"porous medium needs m >= 1, sigma > 1, got m={self.a}, sigma={self.b}")
        elif self.equation == DEGENERATE:
            if not (self.a >= 0 and self.b > 1):
                raise ValueError(f"degenerate equation needs q >= 0, p > 1, got q={self.a}, p={self.b}")
        else:
            raise ValueError(f"unknown equation {self.equation!r}")

    @classmethod
    def porous(cls, m, sigma, n=1, reaction=True):
        return cls(POROUS, float(m), float(sigma), GroupDims(n), reaction)

    @classmethod
    def degenerate(cls, q, p, n=1, reaction=True):
        return cls(DEGENERATE, float(q), float(p), GroupDims(n), reaction)

    @property
    def m(self):
        return self.a if self.equation == POROUS else None

    @property
    def sigma(self):
        return self.b if self.equation == POROUS else None

    @property
    def q(self):
        return self.a if self.equation == DEGENERATE else None

    @property
    def p(self):
        return self.b if self.equation == DEGENERATE else None


@dataclass(frozen=True)
class InitialData:
    """Families:

    bump            amplitude * (1 - |eta|_H^4 / R0^4)_+^3
    gaussian        amplitude * exp(-|eta|_H^4 / R0^4)  (smooth, positive)
    poly_decay      epsilon * (1 + |eta|_H^2)^(-gamma/2)
    scaled_profile  amplitude * w, with w one of the unit profiles above
    """

    family: str = "bump"
    amplitude: float = 0.0
    radius: float = 1.0
    epsilon: float = 1.0
    gamma: float = 2.0
    profile: str = "bump"

    def __post_init__(self):
        if self.family not in ("bump", "gaussian", "poly_decay", "scaled_profile"):
            raise ValueError(f"unknown initial family {self.family!r}")
        if self.family == "scaled_profile" and self.profile not in ("bump", "gaussian"):
            raise ValueError(f"unknown base profile {self.profile!r}")
        if self.family == "poly_decay":
            if not self.gamma > 0:
                raise ValueError("poly_decay needs gamma > 0")
            if self.epsilon < 0:
                raise ValueError("poly_decay needs epsilon >= 0")
        elif self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if not self.radius > 0:
            raise ValueError("radius must be positive")


def _unit_profile(kind: str, h4: np.ndarray, R0: float) -> np.ndarray:
    if kind == "bump":
        return np.clip(1.0 - h4 / R0**4, 0.0, None) ** 3
    return np.exp(-h4 / R0**4)


def build_initial(spec: InitialData, grid: UniformGrid) -> ScalarField:
    c = grid.coordinate_arrays()
    n = grid.n
    s = sum(c[k] ** 2 for k in range(2 * n))
    h4 = np.broadcast_to(s * s + c[2 * n] ** 2, grid.shape)
    if spec.family == "poly_decay":
        v = spec.epsilon * (1.0 + np.sqrt(h4)) ** (-spec.gamma / 2.0)
    elif spec.family == "scaled_profile":
        v = spec.amplitude * _unit_profile(spec.profile, h4, spec.radius)
    else:
        v = spec.amplitude * _unit_profile(spec.family, h4, spec.radius)
    v = np.where(grid.active_mask(), v, 0.0)
    return ScalarField(grid, v)


@dataclass(frozen=True)
class StepControl:
    cfl_safety: float = 0.25
    growth_cap: float = 0.10
    dt_min: float = 1e-30
    t_max: float = 1.0
    blowup_threshold: float = 1e8
    output_dt: float | None = None
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        for name in ("growth_cap", "dt_min", "t_max", "blowup_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.output_dt is not None and not self.output_dt > 0:
            raise ValueError("output_dt must be positive")

    @property
    def cadence(self) -> float:
        return self.output_dt if self.output_dt is not None else self.t_max / 100.0


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    dt: float
    sup_norm: float
    mass: float
    J_theta: float
    y_lambda: float | None
    clamp_l1: float
    y_quench: float | None = None


@dataclass
class RunRecord:
    params: PdeParams
    initial: InitialData
    grid: UniformGrid
    control: StepControl
    rows: list
    classification: str = FAILED
    t_star: float | None = None
    reason: str = ""
    frames: list = field(default_factory=list, repr=False)
    flags: list = field(default_factory=list)

    @property
    def t_max_reached(self) -> float:
        return self.rows[-1].t if self.rows else 0.0

    @property
    def sup_final(self) -> float:
        return self.rows[-1].sup_norm if self.rows else 0.0


@dataclass
class SolverState:
    params: PdeParams
    grid: UniformGrid
    control: StepControl
    values: np.ndarray
    t: float = 0.0
    steps: int = 0
    dt: float = 0.0
    clamp_l1: float = 0.0
    sup_history: list = field(default_factory=list)
    mask: np.ndarray = field(default=None, repr=False)
    stencil_bound: float = 0.0
    vmax: float = 0.0

    @classmethod
    def start(cls, params: PdeParams, field0: ScalarField, control: StepControl):
        grid = field0.grid
        if grid.n != params.dims.n:
            raise GridMismatch("grid and equation dimensions differ")
        v = np.array(field0.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise NonFiniteFieldError("initial data is not finite")
        if np.any(v < 0):
            raise ValueError("initial data must be nonnegative")
        mask = grid.active_mask()
        v = np.where(mask, v, 0.0)
        return cls(params, grid, control, v, mask=mask, stencil_bound=stencil_bound(grid),
                   vmax=float(v.max()))


@lru_cache(maxsize=64)
def stencil_bound(grid: UniformGrid) -> float:
    """Max over active nodes of the absolute row sum of the stencil."""
    c = grid.coordinate_arrays()
    n = grid.n
    hx, hy, ht = grid.spacings
    s = sum(c[k] ** 2 for k in range(2 * n))
    ax = sum(np.abs(c[k]) for k in range(n))
    ay = sum(np.abs(c[n + k]) for k in range(n))
    S = (n * (2.0 / hx**2 + 2.0 / hy**2) + 8.0 * s / ht**2
         + 4.0 * ax / (hy * ht) + 4.0 * ay / (hx * ht))
    S = np.broadcast_to(S, grid.shape)
    return float(S[grid.active_mask()].max())


def _power(v, e):
    if e == 1.0:
        return v
    if e == 2.0:
        return v * v
    return np.power(v, e)


def _rates(state: SolverState):
    """(diffusivity bound, reaction rate bound) for the current field."""
    p = state.params
    vmax = state.vmax
    if p.equation == POROUS:
        D = p.m * vmax ** (p.m - 1.0) if p.m != 1.0 else 1.0
        r = vmax ** (p.sigma - 1.0) if p.reaction else 0.0
    else:
        D = vmax**p.q if p.q != 0.0 else 1.0
        r = vmax ** (p.p - 1.0) if p.reaction else 0.0
    return D, r


def stable_dt(state: SolverState) -> float:
    D, r = _rates(state)
    c = state.control
    dt = math.inf
    if D > 0:
        dt = c.cfl_safety / (D * state.stencil_bound)
    if r > 0:
        dt = min(dt, c.growth_cap / r)
    return dt


def rhs(values: np.ndarray, params: PdeParams, grid: UniformGrid) -> np.ndarray:
    if params.equation == POROUS:
        out = apply_d_h(_power(values, params.m), grid)
        if params.reaction:
            out += _power(values, params.sigma)
    else:
        out = _power(values, params.q) * apply_d_h(values, grid) if params.q != 0.0 else apply_d_h(values, grid)
        if params.reaction:
            out += _power(values, params.p)
    return out


@numba.njit(cache=True)
def _update(v, lap, mask, dt, porous, pa, pb, reaction):
    """new = v + dt*(coef*lap + v^pb) on active nodes, clamped at 0.

    Returns (new, clamped mass sum, max, all finite)."""
    new = np.empty_like(v)
    fv = v.ravel()
    fl = lap.ravel()
    fm = mask.ravel()
    fn = new.ravel()
    clamp = 0.0
    vmax = 0.0
    finite = True
    for i in range(fv.size):
        if not fm[i]:
            fn[i] = 0.0
            continue
        x = fv[i]
        r = fl[i]
        if not porous and pa != 0.0:
            r *= x**pa
        if reaction:
            r += x**pb
        y = x + dt * r
        if not np.isfinite(y):
            finite = False
        if y < 0.0:
            clamp -= y
            y = 0.0
        if y > vmax:
            vmax = y
        fn[i] = y
    return new, clamp, vmax, finite


def step(state: SolverState, dt: float | None = None) -> SolverState:
    """One forward Euler step, in place; returns the state."""
    if dt is None:
        ds = stable_dt(state)
        if ds < state.control.dt_min:
            raise StepUnderflow(f"dt={ds:.3e} below dt_min at t={state.t}")
        dt = min(ds, state.control.t_max - state.t)
    v = state.values
    p = state.params
    porous = p.equation == POROUS
    w = _power(v, p.a) if porous else v
    lap = apply_d_h(w, state.grid)
    new, clamp, vmax, finite = _update(v, lap, state.mask, dt, porous, p.a, p.b, p.reaction)
    if not finite:
        raise NonFiniteFieldError(f"non-finite values at t={state.t + dt}")
    clamp *= state.grid.cell_volume
    state.values = new
    state.vmax = vmax
    state.t += dt
    state.dt = dt
    state.steps += 1
    state.clamp_l1 += clamp
    state.sup_history.append(vmax)
    if len(state.sup_history) > 21:
        del state.sup_history[0]
    return state


# ---------------------------------------------------------------------------
# diagnostics


@lru_cache(maxsize=16)
def _theta_weights(grid: UniformGrid) -> np.ndarray:
    """Theta_1 at the nodes, with eps = 1/(4(2+Q)) and unit total mass."""
    Q = grid.dims.Q
    spec = ThetaSpec(epsilon=1.0 / (4.0 * (2.0 + Q)), A=1.0, dims=grid.dims)
    w = theta_value(spec, grid.points()) / theta_mass(spec)
    w.setflags(write=False)
    return w


def _check_eigen_grid(grid: UniformGrid, pair) -> None:
    eg = pair.Lambda.grid
    if eg.half_extents != grid.half_extents or eg.counts != grid.counts or eg.n != grid.n:
        raise GridMismatch("eigenpair grid does not match the run grid")


def diagnostics(state: SolverState, pair=None) -> DiagnosticsRow:
    v = state.values
    vol = state.grid.cell_volume
    mass = float(v.sum()) * vol
    J = float(np.sum(v * _theta_weights(state.grid))) * vol
    y = None
    yq = None
    if pair is not None:
        L = pair.Lambda.values
        y = float(np.sum(v * L)) * vol
        p = state.params
        if p.equation == DEGENERATE and p.q >= 1.0:
            ball = L > 0
            if np.all(v[ball] > 0):
                if p.q > 1.0:
                    yq = float(np.sum(v[ball] ** (1.0 - p.q) * L[ball])) * vol / (p.q - 1.0)
                else:
                    yq = -float(np.sum(np.log(v[ball]) * L[ball])) * vol
    return DiagnosticsRow(state.t, state.dt, float(v.max()), mass, J, y, state.clamp_l1, yq)


def run(params: PdeParams, initial: InitialData | ScalarField, grid: UniformGrid,
        control: StepControl, eigenpair=None, store_frames: bool = False) -> RunRecord:
    """Integrate to t_max, blow-up or failure; rows land exactly on the output cadence."""
    if isinstance(initial, ScalarField):
        field0, init_spec = initial, None
    else:
        field0, init_spec = build_initial(initial, grid), initial
    if eigenpair is not None:
        _check_eigen_grid(grid, eigenpair)
    state = SolverState.start(params, field0, control)
    rec = RunRecord(params, init_spec, grid, control, [])
    band = _boundary_band(grid)
    band_frac = []

    def emit():
        row = diagnostics(state, eigenpair)
        rec.rows.append(row)
        if band is not None and row.mass > 0:
            band_frac.append(float(np.sum(state.values[band])) * grid.cell_volume / row.mass)
        state.clamp_l1 = 0.0
        if store_frames:
            rec.frames.append((state.t, state.values.copy()))

    emit()
    cadence = control.cadence
    k_next = 1
    start_mass = rec.rows[0].mass
    try:
        while state.t < control.t_max:
            t_out = min(k_next * cadence, control.t_max)
            ds = stable_dt(state)
            if ds < control.dt_min:
                raise StepUnderflow(f"dt={ds:.3e} below dt_min at t={state.t}")
            if ds >= (t_out - state.t) * (1.0 - 1e-12):
                step(state, t_out - state.t)
                state.t = t_out
                emit()
                k_next += 1
            else:
                step(state, ds)
            sup = state.sup_history[-1]
            if sup >= control.blowup_threshold:
                if rec.rows[-1].t != state.t:
                    emit()
                rec.classification = BLOW_UP
                rec.t_star = state.t
                break
            if state.steps >= control.max_steps:
                raise StepUnderflow("step budget exhausted")
    except StepUnderflow as exc:
        if rec.rows[-1].t != state.t:
            emit()
        h = state.sup_history
        if len(h) >= 2 and h[-1] >= 10.0 * h[0]:
            rec.classification = BLOW_UP
            rec.t_star = state.t
        else:
            rec.classification = FAILED
            rec.reason = str(exc)
        _flag(rec, start_mass, band_frac)
        return rec
    except NonFiniteFieldError as exc:
        rec.classification = FAILED
        rec.reason = str(exc)
        return rec
    if rec.classification != BLOW_UP:
        # too few rows to judge a trend: report only that the horizon was reached
        rec.classification = classify(rec) if len(rec.rows) >= 10 else BY_HORIZON
    _flag(rec, start_mass, band_frac)
    return rec


def _boundary_band(grid: UniformGrid, width: int = 2):
    """Nodes within one stencil width of a Dirichlet box face; None for ball grids."""
    if grid.boundary_policy != DIRICHLET_ZERO:
        return None
    band = np.ones(grid.shape, dtype=bool)
    band[tuple(slice(width, -width) for _ in grid.shape)] = False
    return band


def _flag(rec: RunRecord, start_mass: float, band_frac=()) -> None:
    total_clamp = sum(r.clamp_l1 for r in rec.rows)
    if start_mass > 0 and total_clamp > 1e-3 * start_mass:
        rec.flags.append("clamp_exceeds_1e-3_mass")
    if band_frac:
        if band_frac[0] > 1e-12:
            rec.flags.append("initial_mass_near_boundary")
        if max(band_frac) > 1e-6:
            rec.flags.append("boundary_band_mass_exceeds_1e-6")


def classify(rec: RunRecord, min_rows: int = 10) -> str:
    rows = rec.rows
    if len(rows) < min_rows:
        raise ValueError(f"classification needs >= {min_rows} rows, got {len(rows)}")
    sups = np.array([r.sup_norm for r in rows])
    if sups[-1] >= rec.control.blowup_threshold:
        return BLOW_UP
    tail = sups[len(sups) // 2:]
    if np.all(np.diff(tail) <= 1e-12 * np.maximum(1.0, tail[:-1])):
        return DECAYING
    return BY_HORIZON


# ---------------------------------------------------------------------------
# weak form


def _test_arrays(grid: UniformGrid, cutoff: CutoffSpec):
    pts = grid.points()
    jet = cutoff_jet(cutoff, pts)
    return jet.value, d_h_exact(jet, pts)


def _check_support(grid: UniformGrid, cutoff: CutoffSpec):
    R = cutoff.R
    Lx, Ly, Lt = grid.half_extents
    hx, hy, ht = grid.spacings
    if R >= Lx - hx or R >= Ly - hy or R * R >= Lt - ht:
        raise SupportError(f"test function of scale R={R} touches the grid boundary")


def weak_residual_frames(frames, grid: UniformGrid, m: float, sigma: float,
                         cutoff: CutoffSpec, time_scale: float, reaction: bool = True) -> float:
    """Defect of the weak identity

        int v(T) psi(T) - int v(0) psi(0)
            = int int v^sigma psi + v^m Delta_H psi + v psi_t

    for psi(t, eta) = phi(eta) Phi(t / time_scale), frames = [(t, v), ...].
    """
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    _check_support(grid, cutoff)
    phi, lphi = _test_arrays(grid, cutoff)
    vol = grid.cell_volume
    ts = np.array([f[0] for f in frames])
    g, dg = time_cutoff(ts, time_scale)
    integrand = np.empty(len(frames))
    for k, (_, v) in enumerate(frames):
        a = np.sum(_power(v, m) * lphi) * g[k] + np.sum(v * phi) * dg[k]
        if reaction:
            a += np.sum(_power(v, sigma) * phi) * g[k]
        integrand[k] = a * vol
    lhs = (np.sum(frames[-1][1] * phi) * g[-1] - np.sum(frames[0][1] * phi) * g[0]) * vol
    rhs_val = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(ts)))
    return abs(float(lhs) - rhs_val)


def weak_residual(record: RunRecord, cutoff: CutoffSpec, time_scale: float | None = None) -> float:
    """Weak-form defect of a porous-medium record stored with frames."""
    p = record.params
    if p.equation != POROUS:
        raise ValueError("weak_residual applies to porous-medium records; map degenerate runs first")
    if not record.frames:
        raise ValueError("record has no stored frames")
    T = 2.0 * record.frames[-1][0] if time_scale is None else time_scale
    return weak_residual_frames(record.frames, record.grid, p.m, p.sigma, cutoff, T, p.reaction)


def kaplan_inequality_check(record: RunRecord, pair) -> float:
    """max over rows of (RHS - y')/(1 + |RHS|), where

        RHS = -lambda_1 int v^m Lambda + int v^sigma Lambda

    and y' is a centered difference of y(t) = int v Lambda.  Needs frames.
    Positive values are violations.
    """
    _check_eigen_grid(record.grid, pair)
    p = record.params
    if p.equation != POROUS:
        raise ValueError("the eigenfunction inequality is stated for the porous medium equation")
    if len(record.frames) < 3:
        raise ValueError("need stored frames")
    L = pair.Lambda.values
    vol = record.grid.cell_volume
    ts = np.array([f[0] for f in record.frames])
    y = np.array([np.sum(v * L) * vol for _, v in record.frames])
    rhs_vals = np.array([(-pair.lambda1 * np.sum(_power(v, p.m) * L)
                          + (np.sum(_power(v, p.sigma) * L) if p.reaction else 0.0)) * vol
                         for _, v in record.frames])
    if not np.any(y):
        return 0.0
    dy = np.gradient(y, ts)
    viol = (rhs_vals - dy) / (1.0 + np.abs(rhs_vals))
    return float(np.max(viol[1:-1]))


# ---------------------------------------------------------------------------
# ODE comparison bounds


@dataclass(frozen=True)
class OdeBounds:
    regime: str
    constants: dict
    condition_met: bool
    t_star_bound: float | None


def ode_bound(params: PdeParams, y0: float, lambda1: float | None = None) -> OdeBounds:
    """Lifespan bounds from the differential inequalities of the energy methods.

    porous, lambda1 given   eigenfunction method: needs y0 > c3 = (2 lambda1)^(1/(sigma-m))
    porous, lambda1 None    Theta method: needs J0 > lam^(1/(sigma-m)), lam = 2(2+Q)
    degenerate, q > 1       needs y0 < c0; bound c1^-1 c0^(q/(q-1))
    degenerate, q = 1       needs y0 < c2 = -ln(2 lambda1)/(p-2); bound e^c2 / lambda1
    """
    if params.equation == POROUS:
        m, sigma = params.m, params.sigma
        if lambda1 is not None:
            if not lambda1 > 0:
                raise ValueError("lambda1 must be positive")
            c3 = (2.0 * lambda1) ** (1.0 / (sigma - m))
            ok = y0 > c3 and m > 1
            T = 1.0 / (y0 ** (m - 1.0) * (m - 1.0) * lambda1) if ok else None
            return OdeBounds("eigenfunction", {"c3": c3}, ok, T)
        lam = 2.0 * (2.0 + params.dims.Q)
        if m == sigma:
            T = 2.0 * y0 ** (1.0 - sigma) / (sigma - 1.0) if y0 > 0 else None
            return OdeBounds("theta_equal_exponents", {"lambda": lam}, y0 > 0, T)
        thr = lam ** (1.0 / (sigma - m))
        ok = y0 > thr
        T = (y0 ** (1.0 - sigma) / ((sigma - 1.0) * (1.0 - lam * y0 ** (m - sigma)))) if ok else None
        return OdeBounds("theta", {"lambda": lam, "threshold": thr}, ok, T)
    q, p = params.q, params.p
    if lambda1 is None or not lambda1 > 0:
        raise ValueError("quenching bounds need lambda1 > 0")
    if q > 1:
        if not p > q + 1:
            raise ValueError("quenching bound needs p > q + 1")
        c0 = (2.0 * lambda1) ** (-(q - 1.0) / (p - q - 1.0)) / (q - 1.0)
        c1 = lambda1 * q * (q - 1.0) ** (-q / (q - 1.0))
        ok = y0 < c0
        T = c0 ** (q / (q - 1.0)) / c1 if ok else None
        return OdeBounds("quench_q_gt_1", {"c0": c0, "c1": c1}, ok, T)
    if q == 1:
        if not p > 2:
            raise ValueError("quenching bound needs p > 2")
        c2 = -math.log(2.0 * lambda1) / (p - 2.0)
        ok = y0 < c2
        T = math.exp(c2) / lambda1 if ok else None
        return OdeBounds("quench_q_eq_1", {"c2": c2}, ok, T)
    raise ValueError("ODE bounds for the degenerate equation need q >= 1")
