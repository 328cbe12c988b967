"""Closed-form auxiliary functions and their scaling diagnostics.

Everything here is evaluated from exact jets (value, gradient, Hessian) so
the sub-Laplacian of an auxiliary function carries no truncation error.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .hgeom import (FieldJet, GroupDims, GroupPoint, d_h_exact, grad_h_exact,
                    jet_power)


class LemmaViolation(AssertionError):
    pass


class SamplingError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# polynomials with exact jets


class Polynomial:
    """Sparse real polynomial in (x_1..x_n, y_1..y_n, tau).

    Terms are stored as {exponent tuple: coefficient}.
    """

    def __init__(self, terms: dict, ndim: int):
        self.ndim = ndim
        self.terms = {tuple(int(e) for e in k): float(c) for k, c in terms.items() if c != 0.0}
        for k in self.terms:
            if len(k) != ndim:
                raise ValueError(f"exponent {k} does not have {ndim} entries")

    @classmethod
    def random(cls, rng: np.random.Generator, ndim: int = 3, degree: int = 3, scale: float = 1.0):
        terms = {}
        for k in itertools.product(range(degree + 1), repeat=ndim):
            if sum(k) <= degree:
                terms[k] = scale * rng.standard_normal()
        return cls(terms, ndim)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        out: dict = {}
        for ka, ca in self.terms.items():
            for kb, cb in other.terms.items():
                k = tuple(a + b for a, b in zip(ka, kb))
                out[k] = out.get(k, 0.0) + ca * cb
        return Polynomial(out, self.ndim)

    def derivative(self, axis: int) -> "Polynomial":
        out: dict = {}
        for k, c in self.terms.items():
            if k[axis] > 0:
                kk = list(k)
                kk[axis] -= 1
                out[tuple(kk)] = out.get(tuple(kk), 0.0) + c * k[axis]
        return Polynomial(out, self.ndim)

    def __call__(self, at: GroupPoint) -> np.ndarray:
        c = at.coords()
        val = np.zeros(c.shape[:-1])
        for k, coef in self.terms.items():
            mono = np.ones(c.shape[:-1])
            for a, e in enumerate(k):
                if e:
                    mono = mono * c[..., a] ** e
            val = val + coef * mono
        return val

    def jet(self, at: GroupPoint) -> FieldJet:
        d = self.ndim
        grads = [self.derivative(a) for a in range(d)]
        value = self(at)
        grad = np.stack([g(at) for g in grads], axis=-1)
        hess = np.empty(value.shape + (d, d))
        for a in range(d):
            for b in range(a, d):
                hab = grads[a].derivative(b)(at)
                hess[..., a, b] = hab
                hess[..., b, a] = hab
        return FieldJet(value, grad, hess)


# ---------------------------------------------------------------------------
# Theta


@dataclass(frozen=True)
class ThetaSpec:
    epsilon: float = 1.0
    A: float = 1.0
    dims: GroupDims = GroupDims(1)

    def __post_init__(self):
        if not (self.epsilon > 0 and self.A > 0):
            raise ValueError("Theta needs epsilon > 0 and A > 0")

    @property
    def bound_constant(self) -> float:
        """2 eps (Q+2): the constant in the bound -Delta_H Theta <= const * Theta."""
        return 2.0 * self.epsilon * (self.dims.Q + 2)


def _rho(spec: ThetaSpec, at: GroupPoint):
    s = at.radial_sq()
    return spec.A + s * s + at.tau**2, s


def theta_value(spec: ThetaSpec, at: GroupPoint) -> np.ndarray:
    rho, _ = _rho(spec, at)
    return np.exp(-spec.epsilon * np.sqrt(rho))


def theta_eval(spec: ThetaSpec, at: GroupPoint):
    """Theta and its sub-Laplacian from the assembled closed form.

    Delta_H Theta = [(|grad_x rho|^2 + |grad_y rho|^2)/4 + 4 tau^2 s]
                    * (eps rho^-3/2 + eps^2 rho^-1) Theta
                    - 4 eps (n+2) s rho^-1/2 Theta,      s = |x|^2 + |y|^2.
    """
    eps = spec.epsilon
    n = at.n
    rho, s = _rho(spec, at)
    th = np.exp(-eps * np.sqrt(rho))
    # |grad_x rho|^2 + |grad_y rho|^2 = 16 s^2 (|x|^2 + |y|^2) = 16 s^3
    bracket = 16.0 * s**3 / 4.0 + 4.0 * at.tau**2 * s
    lap = (bracket * (eps * rho**-1.5 + eps**2 / rho) * th
           - 4.0 * eps * (n + 2) * s * rho**-0.5 * th)
    return th, lap


def theta_jet(spec: ThetaSpec, at: GroupPoint) -> FieldJet:
    """Hand-differentiated jet of Theta = exp(-eps sqrt(rho))."""
    eps = spec.epsilon
    n = at.n
    d = 2 * n + 1
    rho, s = _rho(spec, at)
    th = np.exp(-eps * np.sqrt(rho))
    c = at.coords()
    z = c[..., :2 * n]
    grad_rho = np.concatenate([4.0 * s[..., None] * z, 2.0 * at.tau[..., None] * np.ones(z.shape[:-1] + (1,))], axis=-1)
    hess_rho = np.zeros(s.shape + (d, d))
    hess_rho[..., :2 * n, :2 * n] = (4.0 * s[..., None, None] * np.eye(2 * n)
                                     + 8.0 * z[..., :, None] * z[..., None, :])
    hess_rho[..., 2 * n, 2 * n] = 2.0
    a1 = -0.5 * eps * rho**-0.5
    outer = grad_rho[..., :, None] * grad_rho[..., None, :]
    coef_outer = 0.25 * eps * rho**-1.5 + 0.25 * eps**2 / rho
    grad = (a1 * th)[..., None] * grad_rho
    hess = th[..., None, None] * (coef_outer[..., None, None] * outer + a1[..., None, None] * hess_rho)
    return FieldJet(th, grad, hess)


def theta_mass(spec: ThetaSpec) -> float:
    """Integral of Theta over H^n (radial reduction in |x|^2+|y|^2 and tau)."""
    n = spec.dims.n
    eps, A = spec.epsilon, spec.A
    # int_{R^2n} g(|z|^2) dz = pi^n / Gamma(n) * int_0^inf s^(n-1) g(s) ds
    pref = math.pi**n / math.gamma(n)

    def inner(s):
        val, _ = integrate.quad(lambda t: math.exp(-eps * math.sqrt(A + s * s + t * t)), 0, np.inf)
        return 2.0 * val * s ** (n - 1)

    val, _ = integrate.quad(inner, 0, np.inf, limit=200)
    return pref * val


@dataclass
class ThetaBoundReport:
    spec: ThetaSpec
    bound_constant: float
    samples: int
    violations: list
    max_slack_ratio: float

    @property
    def ok(self) -> bool:
        return not self.violations


def theta_bound_check(spec: ThetaSpec, box_half_extent: float, samples: int, seed: int,
                      bound_constant: float | None = None, raise_on_violation: bool = True) -> ThetaBoundReport:
    """Check -Delta_H Theta <= C Theta on scrambled-Sobol points of a box.

    ``max_slack_ratio`` is the largest (-Delta_H Theta) / (C Theta).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    C = spec.bound_constant if bound_constant is None else bound_constant
    d = spec.dims.ndim
    sampler = qmc.Sobol(d, scramble=True, seed=seed)
    # draw a balanced power-of-two block and keep the first `samples` points
    u = sampler.random_base2(max(0, int(np.ceil(np.log2(samples)))))[:samples]
    pts = GroupPoint.from_coords((2.0 * u - 1.0) * box_half_extent)
    th, lap = theta_eval(spec, pts)
    slack = -lap - C * th
    bad = np.nonzero(slack > 1e-12)[0]
    violations = [tuple(pts.coords()[i]) for i in bad]
    ratio = float(np.max(np.where(th > 0, -lap / (C * th), -np.inf)))
    report = ThetaBoundReport(spec, C, samples, violations, ratio)
    if violations and raise_on_violation:
        raise LemmaViolation(f"{len(violations)} points violate the Theta bound, first at {violations[0]}")
    return report


# ---------------------------------------------------------------------------
# product rule


def product_rule_defect(u: Callable, v: Callable, points: GroupPoint, uv: Callable | None = None,
                        relative: bool = False) -> float:
    """Max |Delta_H(uv) - (Delta_H u v + 2 grad_H u . grad_H v + u Delta_H v)|.

    ``u``, ``v`` and ``uv`` map a GroupPoint to a FieldJet.  When ``uv`` is
    omitted and both are Polynomials, the product polynomial is formed and
    differentiated directly.
    """
    if uv is None:
        if isinstance(u, Polynomial) and isinstance(v, Polynomial):
            prod = u * v
            uv = prod.jet
        else:
            raise ValueError("supply the product jet uv for non-polynomial factors")
    ju = u.jet(points) if isinstance(u, Polynomial) else u(points)
    jv = v.jet(points) if isinstance(v, Polynomial) else v(points)
    juv = uv(points)
    lhs = d_h_exact(juv, points)
    t1 = d_h_exact(ju, points) * jv.value
    t2 = 2.0 * np.sum(grad_h_exact(ju, points) * grad_h_exact(jv, points), axis=-1)
    t3 = ju.value * d_h_exact(jv, points)
    defect = np.abs(lhs - (t1 + t2 + t3))
    if relative:
        defect = defect / np.maximum(1.0, np.abs(lhs) + np.abs(t1) + np.abs(t2) + np.abs(t3))
    return float(np.max(defect))


# ---------------------------------------------------------------------------
# cutoffs


def profile(r):
    """C^2 cutoff profile: 1 on [0,1/2], quintic smoothstep down to 0 at 1.

    Returns (Phi, Phi', Phi'').
    """
    r = np.asarray(r, dtype=float)
    t = np.clip(2.0 * r - 1.0, 0.0, 1.0)
    inside = (r > 0.5) & (r < 1.0)
    S = t**3 * (10.0 + t * (-15.0 + 6.0 * t))
    dS = 30.0 * t**2 * (1.0 - t) ** 2
    d2S = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    phi = 1.0 - S
    d1 = np.where(inside, -2.0 * dS, 0.0)
    d2 = np.where(inside, -4.0 * d2S, 0.0)
    return phi, d1, d2


@dataclass(frozen=True)
class CutoffSpec:
    """phi(eta) = Phi(|x|/R) Phi(|y|/R) Phi(|tau|/R^2), raised to ``power_ell``.

    Either ``scale_R`` is given, or ``time_scale_T`` and ``alpha`` with
    R = T^alpha.
    """

    scale_R: float | None = None
    power_ell: float = 1.0
    time_scale_T: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.scale_R is None:
            if self.time_scale_T is None or self.alpha is None:
                raise ValueError("need scale_R or (time_scale_T, alpha)")
            if not self.time_scale_T > 0:
                raise ValueError("time_scale_T must be positive")
        elif not self.scale_R > 0:
            raise ValueError("scale_R must be positive")
        if self.power_ell < 1:
            raise ValueError("power_ell must be >= 1")

    @property
    def R(self) -> float:
        if self.scale_R is not None:
            return float(self.scale_R)
        return float(self.time_scale_T ** self.alpha)


def _radial_factor(z: np.ndarray, R: float):
    """Jet of Phi(|z|/R) in the block of coordinates z, shape (..., k)."""
    k = z.shape[-1]
    rad = np.sqrt(np.sum(z * z, axis=-1))
    p, d1, d2 = profile(rad / R)
    safe = np.where(rad > 0, rad, 1.0)
    unit = z / safe[..., None]
    grad = (d1 / R)[..., None] * unit
    uu = unit[..., :, None] * unit[..., None, :]
    hess = ((d2 / R**2)[..., None, None] * uu
            + (d1 / (R * safe))[..., None, None] * (np.eye(k) - uu))
    # Phi' = Phi'' = 0 near the origin, so the rad == 0 limits are zero
    zero = (rad == 0)[..., None]
    grad = np.where(zero, 0.0, grad)
    hess = np.where(zero[..., None], 0.0, hess)
    return p, grad, hess


def cutoff_jet(spec: CutoffSpec, at: GroupPoint) -> FieldJet:
    n = at.n
    d = 2 * n + 1
    R = spec.R
    px, gx, hx = _radial_factor(at.x, R)
    py, gy, hy = _radial_factor(at.y, R)
    tau = np.asarray(at.tau, dtype=float)
    pt, d1t, d2t = profile(np.abs(tau) / R**2)
    gt = d1t / R**2 * np.sign(tau)
    ht = d2t / R**4
    shape = px.shape
    value = px * py * pt
    grad = np.zeros(shape + (d,))
    grad[..., :n] = gx * (py * pt)[..., None]
    grad[..., n:2 * n] = gy * (px * pt)[..., None]
    grad[..., 2 * n] = px * py * gt
    hess = np.zeros(shape + (d, d))
    hess[..., :n, :n] = hx * (py * pt)[..., None, None]
    hess[..., n:2 * n, n:2 * n] = hy * (px * pt)[..., None, None]
    hess[..., 2 * n, 2 * n] = px * py * ht
    xy = gx[..., :, None] * gy[..., None, :] * pt[..., None, None]
    hess[..., :n, n:2 * n] = xy
    hess[..., n:2 * n, :n] = np.swapaxes(xy, -1, -2)
    xt = gx * (py * gt)[..., None]
    yt = gy * (px * gt)[..., None]
    hess[..., :n, 2 * n] = xt
    hess[..., 2 * n, :n] = xt
    hess[..., n:2 * n, 2 * n] = yt
    hess[..., 2 * n, n:2 * n] = yt
    jet = FieldJet(value, grad, hess)
    if spec.power_ell != 1.0:
        jet = jet_power(jet, spec.power_ell)
    return jet


def time_cutoff(t, T: float, ell: float = 1.0):
    """(phi_3^ell, d/dt phi_3^ell) with phi_3(t) = Phi(t/T)."""
    p, d1, _ = profile(np.asarray(t, dtype=float) / T)
    val = p**ell
    safe = np.where(p > 0, p, 1.0)
    dval = np.where(p > 0, ell * safe ** (ell - 1.0) * d1 / T, 0.0)
    return val, dval


# ---------------------------------------------------------------------------
# scaling fits


@dataclass
class ScalingReport:
    inputs: list
    measured: list
    fitted_slope: float
    target_slope: float
    slope_tolerance: float
    label: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.inputs) < 4:
            raise ValueError("a scaling report needs >= 4 scale values")

    @property
    def ok(self) -> bool:
        return abs(self.fitted_slope - self.target_slope) <= self.slope_tolerance


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


def _check_dyadic(values):
    v = np.asarray(values, dtype=float)
    if len(v) < 4:
        raise ValueError("need at least 4 scale values")
    r = v[1:] / v[:-1]
    if not np.allclose(r, 2.0):
        raise ValueError(f"scale values must be dyadic, got {list(values)}")


def _shell_points(R: float, n: int, N: int) -> GroupPoint:
    """Tensor-grid nodes of the box |x_i|,|y_i| <= R, |tau| <= R^2 (N per axis)."""
    u = np.linspace(-1.0, 1.0, N)
    axes = [u * R] * (2 * n) + [u * R * R]
    c = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2 * n + 1)
    return GroupPoint.from_coords(c)


def cutoff_sups(R: float, ell: float = 1.0, n: int = 1, N: int = 41):
    """(sup |Delta_H phi_R^ell|, sup |grad_H phi_R^ell|) over the support shell."""
    pts = _shell_points(R, n, N)
    jet = cutoff_jet(CutoffSpec(scale_R=R, power_ell=ell), pts)
    lap = np.abs(d_h_exact(jet, pts))
    grad = np.linalg.norm(grad_h_exact(jet, pts), axis=-1)
    return float(lap.max()), float(grad.max())


def cutoff_scaling_report(ell: float, R_list: Sequence[float], n: int = 1, N: int = 41,
                          tolerance: float = 0.1, stabilization: float = 0.05):
    """Log-log slopes of the cutoff derivative sups against R (targets -2, -1)."""
    _check_dyadic(R_list)
    laps, grads = [], []
    for R in R_list:
        lap, grad = cutoff_sups(R, ell, n, N)
        lap2, grad2 = cutoff_sups(R, ell, n, 2 * N - 1)
        for a, b in ((lap, lap2), (grad, grad2)):
            if abs(b - a) > stabilization * abs(b):
                raise SamplingError(f"sup not stabilized at R={R}: {a} vs {b}")
        laps.append(lap2)
        grads.append(grad2)
    lap_rep = ScalingReport(list(R_list), laps, loglog_slope(R_list, laps), -2.0, tolerance,
                            label="sup|Delta_H phi_R|")
    grad_rep = ScalingReport(list(R_list), grads, loglog_slope(R_list, grads), -1.0, tolerance,
                             label="sup|grad_H phi_R|")
    return lap_rep, grad_rep


# ---------------------------------------------------------------------------
# capacity functionals

PHI_FLOOR = 1e-10


def capacity_alpha(m: float, sigma: float) -> float:
    return (sigma - m) / (2.0 * (sigma - 1.0))


def default_ell(m: float, sigma: float) -> float:
    return 4.0 * math.ceil(sigma / (sigma - m)) + 4.0


def capacity_exponents(m: float, sigma: float, Q: int = 4) -> dict:
    """Growth exponents in T of J1 and J2 and their balanced sum."""
    a = capacity_alpha(m, sigma)
    return {
        "alpha": a,
        "J1": -2.0 * a * sigma / (sigma - m) + 1.0 + a * Q,
        "J2": a * Q - sigma / (sigma - 1.0) + 1.0,
        "combined": (sigma - m) * Q / (2.0 * (sigma - 1.0)) - sigma / (sigma - 1.0) + 1.0,
    }


def _validate_capacity(T, m, sigma, ell):
    if not (sigma > m >= 1 and sigma > 1):
        raise ValueError(f"need sigma > m >= 1, got m={m}, sigma={sigma}")
    if not T > 1:
        raise ValueError("T must exceed 1")
    if not ell > 2 * sigma / (sigma - m):
        raise ValueError(f"ell={ell} too small: need ell > 2 sigma/(sigma-m)")


def _annulus_midpoints(R: float, n: int, N: int):
    """Midpoints of an N^(2n+1) tensor grid of the box of scale R, restricted
    to the shell outside the inner box C_0 where derivatives live."""
    if N % 4:
        raise ValueError("N must be a multiple of 4 so the inner box aligns with cells")
    u = (np.arange(N) + 0.5) / N * 2.0 - 1.0
    axes = [u * R] * (2 * n) + [u * R * R]
    mesh = np.meshgrid(*axes, indexing="ij")
    c = np.stack(mesh, axis=-1).reshape(-1, 2 * n + 1)
    inner = np.all(np.abs(c[:, :2 * n]) < R / 2, axis=-1) & (np.abs(c[:, 2 * n]) < R * R / 2)
    cell = (2.0 * R / N) ** (2 * n) * (2.0 * R * R / N)
    return GroupPoint.from_coords(c[~inner]), cell


def _space_integrals(R, m, sigma, ell, n, N, chunk=200_000):
    pts, cell = _annulus_midpoints(R, n, N)
    spec = CutoffSpec(scale_R=R, power_ell=ell)
    c = pts.coords()
    j1 = 0.0
    j2 = 0.0
    for start in range(0, c.shape[0], chunk):
        p = GroupPoint.from_coords(c[start:start + chunk])
        jet = cutoff_jet(spec, p)
        P = jet.value
        lap = np.abs(d_h_exact(jet, p))
        phi = np.where(P > 0, P, 0.0) ** (1.0 / ell)
        ok = phi >= PHI_FLOOR
        with np.errstate(divide="ignore"):
            logs = (-m / (sigma - m)) * ell * np.log(np.where(ok, phi, 1.0)) \
                + (sigma / (sigma - m)) * np.log(lap)
        integrand = np.where(ok, np.exp(logs), 0.0)
        j1 += math.fsum(integrand) * cell
        j2 += math.fsum(P) * cell
    return j1, j2


def _time_integrals(T, sigma, ell, Nt):
    t = (np.arange(Nt) + 0.5) / Nt * T
    dt = T / Nt
    val, dval = time_cutoff(t, T, ell)
    base = val ** (1.0 / ell)
    ok = base >= PHI_FLOOR
    with np.errstate(divide="ignore"):
        logs = (-ell / (sigma - 1.0)) * np.log(np.where(ok, base, 1.0)) \
            + (sigma / (sigma - 1.0)) * np.log(np.abs(dval))
    j2 = np.where(ok, np.exp(logs), 0.0)
    return math.fsum(val) * dt, math.fsum(j2) * dt


def capacity_functionals(T: float, m: float, sigma: float, ell: float | None = None, n: int = 1,
                         N: int = 48, Nt: int = 4096, tol: float = 0.05):
    """(J1, J2) by midpoint quadrature on the support shell times [0, T].

    The spatial and temporal factors of both integrands separate, so each
    is integrated on its own grid.  Convergence is certified by repeating
    with doubled resolution.
    """
    ell = default_ell(m, sigma) if ell is None else ell
    _validate_capacity(T, m, sigma, ell)
    R = T ** capacity_alpha(m, sigma)

    def evaluate(Ns, Nts):
        s1, s2 = _space_integrals(R, m, sigma, ell, n, Ns)
        t1, t2 = _time_integrals(T, sigma, ell, Nts)
        return s1 * t1, s2 * t2

    coarse = evaluate(N, Nt)
    fine = evaluate(2 * N, 2 * Nt)
    for a, b, name in zip(coarse, fine, ("J1", "J2")):
        if not (b > 0) or abs(a - b) > tol * abs(b):
            raise QuadratureError(f"{name} not converged at T={T}: {a} vs {b}")
    return fine


def capacity_scaling_report(m: float, sigma: float, ell: float | None, T_list: Sequence[float],
                            n: int = 1, N: int = 48, tolerance: float = 0.15):
    """Fitted log-log slopes of J1(T), J2(T) against their exponent formulas."""
    _check_dyadic(T_list)
    Q = 2 * n + 2
    ex = capacity_exponents(m, sigma, Q)
    vals = [capacity_functionals(T, m, sigma, ell, n, N) for T in T_list]
    j1 = [v[0] for v in vals]
    j2 = [v[1] for v in vals]
    rep1 = ScalingReport(list(T_list), j1, loglog_slope(T_list, j1), ex["J1"], tolerance,
                         label="J1", extra={"alpha": ex["alpha"]})
    rep2 = ScalingReport(list(T_list), j2, loglog_slope(T_list, j2), ex["J2"], tolerance,
                         label="J2", extra={"alpha": ex["alpha"]})
    return rep1, rep2
