"""Heisenberg group algebra and discrete/exact sub-Laplacian.

Coordinates on H^n are ordered (x_1..x_n, y_1..y_n, tau) everywhere: in
grids, in jets and in stacked coordinate arrays.  Point-valued functions
accept numpy arrays with leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

DIRICHLET_ZERO = "dirichlet_zero"
BALL_MASK = "ball_mask"


class GridError(ValueError):
    pass


class NonFiniteFieldError(ValueError):
    pass


@dataclass(frozen=True)
class GroupDims:
    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")

    @property
    def Q(self) -> int:
        return 2 * self.n + 2

    @property
    def ndim(self) -> int:
        return 2 * self.n + 1


@dataclass(frozen=True)
class GroupPoint:
    """A point (x, y, tau) of H^n.

    ``x`` and ``y`` have trailing dimension n; any leading dimensions are
    treated as a batch and ``tau`` must broadcast against them.
    """

    x: np.ndarray
    y: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        tau = np.asarray(self.tau, dtype=float)
        if x.shape[-1] != y.shape[-1]:
            raise ValueError("x and y must have the same length n")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(tau))):
            raise ValueError("GroupPoint components must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "tau", tau)

    @property
    def n(self) -> int:
        return self.x.shape[-1]

    @classmethod
    def identity(cls, n: int = 1) -> "GroupPoint":
        return cls(np.zeros(n), np.zeros(n), 0.0)

    @classmethod
    def from_coords(cls, coords) -> "GroupPoint":
        """Build from an array whose last axis holds (x_1..x_n, y_1..y_n, tau)."""
        c = np.asarray(coords, dtype=float)
        d = c.shape[-1]
        if d % 2 == 0:
            raise ValueError(f"coordinate length must be odd (2n+1), got {d}")
        n = (d - 1) // 2
        return cls(c[..., :n], c[..., n:2 * n], c[..., 2 * n])

    def coords(self) -> np.ndarray:
        tau = np.broadcast_to(self.tau, self.x.shape[:-1])[..., None]
        return np.concatenate([self.x, self.y, tau], axis=-1)

    def radial_sq(self) -> np.ndarray:
        """|x|^2 + |y|^2."""
        return np.sum(self.x**2, axis=-1) + np.sum(self.y**2, axis=-1)


def _check_same_n(a: GroupPoint, b: GroupPoint):
    if a.n != b.n:
        raise ValueError(f"dimension mismatch: n={a.n} vs n={b.n}")


def group_op(a: GroupPoint, b: GroupPoint) -> GroupPoint:
    _check_same_n(a, b)
    twist = 2.0 * (np.sum(a.x * b.y, axis=-1) - np.sum(b.x * a.y, axis=-1))
    return GroupPoint(a.x + b.x, a.y + b.y, a.tau + b.tau + twist)


def group_inverse(a: GroupPoint) -> GroupPoint:
    return GroupPoint(-a.x, -a.y, -a.tau)


def hnorm(a: GroupPoint) -> np.ndarray:
    return ((a.radial_sq()) ** 2 + a.tau**2) ** 0.25


def dilate(a: GroupPoint, b: float) -> GroupPoint:
    if not b > 0:
        raise ValueError(f"dilation factor must be positive, got {b}")
    return GroupPoint(b * a.x, b * a.y, b * b * a.tau)


def dilation_matrix(n: int, b: float) -> np.ndarray:
    """Jacobian of delta_b in (x, y, tau) coordinates."""
    return np.diag([b] * (2 * n) + [b * b])


def left_translation_matrix(g: GroupPoint) -> np.ndarray:
    """Jacobian of eta -> g o eta (the map is affine)."""
    n = g.n
    d = 2 * n + 1
    M = np.eye(d)
    # tau' = tau + g_tau + 2(g_x . y - x . g_y)
    M[2 * n, :n] = -2.0 * g.y
    M[2 * n, n:2 * n] = 2.0 * g.x
    return M


# ---------------------------------------------------------------------------
# jets


@dataclass(frozen=True)
class FieldJet:
    """Value, gradient and Hessian of a function, possibly batched.

    ``grad`` has shape (..., d) and ``hess`` (..., d, d) with d = 2n+1.
    """

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        hess = np.asarray(self.hess, dtype=float)
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float))
        object.__setattr__(self, "grad", np.asarray(self.grad, dtype=float))
        # symmetric by construction
        object.__setattr__(self, "hess", 0.5 * (hess + np.swapaxes(hess, -1, -2)))

    @property
    def ndim(self) -> int:
        return self.grad.shape[-1]

    def scaled(self, c) -> "FieldJet":
        c = np.asarray(c, dtype=float)
        return FieldJet(c * self.value, c[..., None] * self.grad, c[..., None, None] * self.hess)

    def compose_linear(self, M: np.ndarray) -> "FieldJet":
        """Jet of eta -> f(M eta + c) given the jet of f at M eta + c."""
        grad = self.grad @ M
        hess = np.swapaxes(M, -1, -2) @ self.hess @ M
        return FieldJet(self.value, grad, hess)


def jet_product(u: FieldJet, v: FieldJet) -> FieldJet:
    """Leibniz rule for ordinary partial derivatives."""
    value = u.value * v.value
    grad = u.grad * v.value[..., None] + u.value[..., None] * v.grad
    cross = u.grad[..., :, None] * v.grad[..., None, :]
    hess = (u.hess * v.value[..., None, None] + u.value[..., None, None] * v.hess
            + cross + np.swapaxes(cross, -1, -2))
    return FieldJet(value, grad, hess)


def jet_power(u: FieldJet, ell: float) -> FieldJet:
    """Jet of u**ell for u >= 0; derivatives vanish wherever u == 0."""
    val = np.asarray(u.value, dtype=float)
    pos = val > 0
    safe = np.where(pos, val, 1.0)
    p0 = np.where(pos, safe**ell, 0.0)
    p1 = np.where(pos, ell * safe ** (ell - 1.0), 0.0)
    p2 = np.where(pos, ell * (ell - 1.0) * safe ** (ell - 2.0), 0.0)
    gg = u.grad[..., :, None] * u.grad[..., None, :]
    return FieldJet(p0, p1[..., None] * u.grad,
                    p2[..., None, None] * gg + p1[..., None, None] * u.hess)


def _split_coords(at: GroupPoint, d: int):
    n = (d - 1) // 2
    if at.n != n:
        raise ValueError(f"jet has {d} coordinates but point has n={at.n}")
    return n


def grad_h_exact(jet: FieldJet, at: GroupPoint) -> np.ndarray:
    """Horizontal gradient (X_1..X_n, Y_1..Y_n) f, shape (..., 2n)."""
    d = jet.ndim
    n = _split_coords(at, d)
    g = jet.grad
    ft = g[..., 2 * n:2 * n + 1]
    X = g[..., :n] - 2.0 * at.y * ft
    Y = g[..., n:2 * n] + 2.0 * at.x * ft
    return np.concatenate([X, Y], axis=-1)


def d_h_exact(jet: FieldJet, at: GroupPoint) -> np.ndarray:
    """Sub-Laplacian from exact partials, expanded form."""
    d = jet.ndim
    n = _split_coords(at, d)
    H = jet.hess
    t = 2 * n
    lap = sum(H[..., i, i] for i in range(2 * n))
    out = lap + 4.0 * at.radial_sq() * H[..., t, t]
    for i in range(n):
        out = out + 4.0 * (at.x[..., i] * H[..., n + i, t] - at.y[..., i] * H[..., i, t])
    return out


# ---------------------------------------------------------------------------
# grids and fields


@dataclass(frozen=True)
class UniformGrid:
    """Uniform node grid on [-Lx,Lx]^n x [-Ly,Ly]^n x [-Ltau,Ltau].

    Every x_i axis shares (Lx, Nx) and every y_i axis shares (Ly, Ny).
    """

    half_extents: tuple
    counts: tuple
    boundary_policy: str = DIRICHLET_ZERO
    ball_radius: float | None = None
    n: int = 1

    def __post_init__(self):
        he = tuple(float(v) for v in self.half_extents)
        ct = tuple(int(v) for v in self.counts)
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "counts", ct)
        if len(he) != 3 or len(ct) != 3:
            raise GridError("half_extents and counts must be (x, y, tau) triples")
        if min(he) <= 0:
            raise GridError(f"half extents must be positive, got {he}")
        if min(ct) < 5:
            raise GridError(f"every count must be >= 5 for the stencils, got {ct}")
        if self.boundary_policy not in (DIRICHLET_ZERO, BALL_MASK):
            raise GridError(f"unknown boundary policy {self.boundary_policy!r}")
        if self.boundary_policy == BALL_MASK:
            if self.ball_radius is None or not self.ball_radius > 0:
                raise GridError("ball_mask needs a positive ball_radius")

    @property
    def dims(self) -> GroupDims:
        return GroupDims(self.n)

    @property
    def spacings(self) -> tuple:
        return tuple(2.0 * L / (N - 1) for L, N in zip(self.half_extents, self.counts))

    @property
    def shape(self) -> tuple:
        Nx, Ny, Nt = self.counts
        return (Nx,) * self.n + (Ny,) * self.n + (Nt,)

    @property
    def axis_spacings(self) -> tuple:
        hx, hy, ht = self.spacings
        return (hx,) * self.n + (hy,) * self.n + (ht,)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.axis_spacings))

    def axis(self, k: int) -> np.ndarray:
        """Node coordinates along axis k (0..2n)."""
        n = self.n
        j = 0 if k < n else (1 if k < 2 * n else 2)
        L, N = self.half_extents[j], self.counts[j]
        return np.linspace(-L, L, N)

    def coordinate_arrays(self) -> list:
        """Broadcastable coordinate arrays, one per axis."""
        d = 2 * self.n + 1
        out = []
        for k in range(d):
            shape = [1] * d
            shape[k] = -1
            out.append(self.axis(k).reshape(shape))
        return out

    def points(self) -> GroupPoint:
        c = np.meshgrid(*[self.axis(k) for k in range(2 * self.n + 1)], indexing="ij")
        return GroupPoint.from_coords(np.stack(c, axis=-1))

    def hnorm_nodes(self) -> np.ndarray:
        c = self.coordinate_arrays()
        n = self.n
        s = sum(c[k] ** 2 for k in range(2 * n))
        return np.broadcast_to((s**2 + c[2 * n] ** 2) ** 0.25, self.shape)

    def active_mask(self) -> np.ndarray:
        """Nodes that are updated by evolution; everything else is held at 0."""
        m = np.zeros(self.shape, dtype=bool)
        m[(slice(1, -1),) * (2 * self.n + 1)] = True
        if self.boundary_policy == BALL_MASK:
            m &= self.hnorm_nodes() < self.ball_radius
        return m

    def scaled(self, b: float) -> "UniformGrid":
        """The image grid under delta_b (same counts)."""
        Lx, Ly, Lt = self.half_extents
        R = None if self.ball_radius is None else self.ball_radius * b
        return UniformGrid((Lx * b, Ly * b, Lt * b * b), self.counts,
                           self.boundary_policy, R, self.n)

    def with_policy(self, policy: str, ball_radius: float | None = None) -> "UniformGrid":
        return UniformGrid(self.half_extents, self.counts, policy, ball_radius, self.n)


@dataclass(frozen=True)
class ScalarField:
    grid: UniformGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: UniformGrid, f) -> "ScalarField":
        """Sample f(GroupPoint) at every node."""
        return cls(grid, np.broadcast_to(f(grid.points()), grid.shape).copy())

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)


# ---------------------------------------------------------------------------
# finite differences


def _shift(g, k, s, d):
    """View of the padded array g shifted by s along axis k."""
    idx = [slice(1, -1)] * d
    idx[k] = slice(1 + s, g.shape[k] - 1 + s)
    return g[tuple(idx)]


def _shift2(g, k1, s1, k2, s2, d):
    idx = [slice(1, -1)] * d
    idx[k1] = slice(1 + s1, g.shape[k1] - 1 + s1)
    idx[k2] = slice(1 + s2, g.shape[k2] - 1 + s2)
    return g[tuple(idx)]


def _prepared_values(f: ScalarField) -> np.ndarray:
    grid = f.grid
    v = f.values
    if not np.all(np.isfinite(v)):
        raise NonFiniteFieldError("field contains NaN or Inf")
    if grid.boundary_policy == BALL_MASK:
        v = np.where(grid.hnorm_nodes() < grid.ball_radius, v, 0.0)
    return v


def apply_d_h(v: np.ndarray, grid: UniformGrid) -> np.ndarray:
    """Expanded-form stencil on a raw array with zero ghost values."""
    if grid.n == 1 and _kernel_3d is not None:
        out = np.empty_like(v)
        hx, hy, ht = grid.spacings
        _kernel_3d(np.ascontiguousarray(v), out, grid.axis(0), grid.axis(1), hx, hy, ht)
        return out
    return _apply_d_h_numpy(v, grid)


def _apply_d_h_numpy(v: np.ndarray, grid: UniformGrid) -> np.ndarray:
    n = grid.n
    d = 2 * n + 1
    t = 2 * n
    h = grid.axis_spacings
    c = grid.coordinate_arrays()
    g = np.pad(v, 1)
    center = v
    out = np.zeros_like(v)
    for k in range(2 * n):
        out += (_shift(g, k, 1, d) - 2.0 * center + _shift(g, k, -1, d)) / (h[k] * h[k])
    dtt = (_shift(g, t, 1, d) - 2.0 * center + _shift(g, t, -1, d)) / (h[t] * h[t])
    s = sum(c[k] ** 2 for k in range(2 * n))
    out += 4.0 * s * dtt
    for i in range(n):
        for a, coef in ((n + i, c[i]), (i, -c[n + i])):
            cross = (_shift2(g, a, 1, t, 1, d) - _shift2(g, a, 1, t, -1, d)
                     - _shift2(g, a, -1, t, 1, d) + _shift2(g, a, -1, t, -1, d))
            out += 4.0 * coef * cross / (4.0 * h[a] * h[t])
    return out


def _d_h_3d(v, out, xs, ys, hx, hy, ht):
    nx, ny, nt = v.shape
    cxx = 1.0 / (hx * hx)
    cyy = 1.0 / (hy * hy)
    ctt = 1.0 / (ht * ht)
    cyt = 1.0 / (hy * ht)
    cxt = 1.0 / (hx * ht)
    for i in range(nx):
        x = xs[i]
        for j in range(ny):
            y = ys[j]
            s4 = 4.0 * (x * x + y * y)
            for k in range(nt):
                c = v[i, j, k]
                xm = v[i - 1, j, k] if i > 0 else 0.0
                xp = v[i + 1, j, k] if i < nx - 1 else 0.0
                ym = v[i, j - 1, k] if j > 0 else 0.0
                yp = v[i, j + 1, k] if j < ny - 1 else 0.0
                tm = v[i, j, k - 1] if k > 0 else 0.0
                tp = v[i, j, k + 1] if k < nt - 1 else 0.0
                ypp = ypm = ymp = ymm = 0.0
                xpp = xpm = xmp = xmm = 0.0
                if k < nt - 1:
                    if j < ny - 1:
                        ypp = v[i, j + 1, k + 1]
                    if j > 0:
                        ymp = v[i, j - 1, k + 1]
                    if i < nx - 1:
                        xpp = v[i + 1, j, k + 1]
                    if i > 0:
                        xmp = v[i - 1, j, k + 1]
                if k > 0:
                    if j < ny - 1:
                        ypm = v[i, j + 1, k - 1]
                    if j > 0:
                        ymm = v[i, j - 1, k - 1]
                    if i < nx - 1:
                        xpm = v[i + 1, j, k - 1]
                    if i > 0:
                        xmm = v[i - 1, j, k - 1]
                lap = (xp - 2.0 * c + xm) * cxx + (yp - 2.0 * c + ym) * cyy
                dtt = (tp - 2.0 * c + tm) * ctt
                dyt = (ypp - ypm - ymp + ymm) * cyt
                dxt = (xpp - xpm - xmp + xmm) * cxt
                out[i, j, k] = lap + s4 * dtt + x * dyt - y * dxt


_kernel_3d = numba.njit(cache=True)(_d_h_3d) if numba is not None else None


def d_h_fd(f: ScalarField) -> ScalarField:
    """Second-order finite-difference sub-Laplacian of a grid field."""
    v = _prepared_values(f)
    out = apply_d_h(v, f.grid)
    if f.grid.boundary_policy == BALL_MASK:
        out = np.where(f.grid.hnorm_nodes() < f.grid.ball_radius, out, 0.0)
    return ScalarField(f.grid, out)


def grad_h_fd(f: ScalarField) -> list:
    """Central-difference (X_1..X_n, Y_1..Y_n) f as 2n fields."""
    grid = f.grid
    v = _prepared_values(f)
    n = grid.n
    d = 2 * n + 1
    t = 2 * n
    h = grid.axis_spacings
    c = grid.coordinate_arrays()
    g = np.pad(v, 1)

    def central(k):
        return (_shift(g, k, 1, d) - _shift(g, k, -1, d)) / (2.0 * h[k])

    ft = central(t)
    comps = [central(i) - 2.0 * c[n + i] * ft for i in range(n)]
    comps += [central(n + i) + 2.0 * c[i] * ft for i in range(n)]
    if grid.boundary_policy == BALL_MASK:
        inside = grid.hnorm_nodes() < grid.ball_radius
        comps = [np.where(inside, comp, 0.0) for comp in comps]
    return [ScalarField(grid, np.broadcast_to(comp, grid.shape).copy()) for comp in comps]


def interior_slice(grid: UniformGrid, width: int = 1) -> tuple:
    return (slice(width, -width),) * (2 * grid.n + 1)


def observed_order(errors: Sequence[float], ratio: float = 2.0) -> list:
    """log_ratio(e_k / e_{k+1}) for successive refinements."""
    e = np.asarray(errors, dtype=float)
    return list(np.log(e[:-1] / e[1:]) / np.log(ratio))
