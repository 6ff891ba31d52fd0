"""Minimizing-movement stepper for the rescaled thin-film flow.

Each time step solves

    minimize over monotone X:   tau * (E[X] - E[equilibrium])
                                + (1/2) * (M/N) * sum (X_i - Xprev_i)^2

on quantile position vectors, i.e. the implicit Euler step of the
Wasserstein gradient flow of the relative energy.  Monotonicity is kept
by optimizing over the start position and the logs of the increments
above a small floor, so the inner problem is unconstrained.  The inner
solver is gradient descent with backtracking line search, with an
L-BFGS-accelerated path behind the same interface (the default: the
surface-energy term makes the problem stiff enough that plain descent
cannot reach the stopping tolerance in reasonable time at production
cell counts).

Each accepted step carries a minimality certificate (final objective not
above the objective of staying put), the movement actually paid, a
residual of the per-step optimality (Euler-Lagrange) equation, and an
edge-slope diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize

from .density import GridDensity, QuantileDensity, SmythHill, grid_to_quantile, quantile_to_grid
from .functionals import (
    FunctionalRecord,
    RecordContext,
    make_record_context,
    record,
)

__all__ = [
    "JkoConfig",
    "JkoStepDiagnostics",
    "Snapshot",
    "JkoTrajectory",
    "StepFailure",
    "objective",
    "step",
    "el_residual",
    "run",
    "weak_form_residual",
    "BumpTestFunction",
    "default_test_functions",
]


class StepFailure(RuntimeError):
    """Inner solver could not keep the objective at or below its initial
    value.  Carries the diagnostics of the failed step and, when raised
    out of :func:`run`, the partial trajectory computed so far."""

    def __init__(self, message, diagnostics=None, trajectory=None):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.trajectory = trajectory


@dataclass(frozen=True)
class JkoConfig:
    """Parameters of the minimizing-movement scheme.

    ``eps_mono`` is the floor on quantile increments; ``None`` resolves to
    1e-9 times the initial support width when a run starts.  ``inner_tol``
    is a stopping tolerance on the inner gradient norm relative to its
    value at the start of the step.
    """

    tau: float = 1e-3
    n_cells: int = 400
    eps_mono: float | None = None
    inner_tol: float = 1e-6
    max_inner_iters: int = 500
    el_check_tol: float = 0.05
    inner_method: str = "lbfgs"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.n_cells < 32:
            raise ValueError(f"need at least 32 cells, got {self.n_cells}")
        if self.eps_mono is not None and self.eps_mono <= 0:
            raise ValueError("eps_mono must be positive when given")
        if self.inner_tol <= 0:
            raise ValueError("inner_tol must be positive")
        if self.inner_method not in ("lbfgs", "gd"):
            raise ValueError(f"unknown inner method {self.inner_method!r}")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau, "n_cells": self.n_cells,
            "eps_mono": self.eps_mono, "inner_tol": self.inner_tol,
            "max_inner_iters": self.max_inner_iters,
            "el_check_tol": self.el_check_tol,
            "inner_method": self.inner_method,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JkoConfig":
        return cls(**{k: d[k] for k in (
            "tau", "n_cells", "eps_mono", "inner_tol", "max_inner_iters",
            "el_check_tol", "inner_method") if k in d})


@dataclass(frozen=True)
class JkoStepDiagnostics:
    objective_initial: float
    objective_final: float
    inner_iters: int
    w2_sq_moved: float          # (1/2) W2^2 actually paid by the step
    el_residual: float
    edge_slope_indicator: float

    def to_dict(self) -> dict:
        return {
            "objective_initial": self.objective_initial,
            "objective_final": self.objective_final,
            "inner_iters": self.inner_iters,
            "w2_sq_moved": self.w2_sq_moved,
            "el_residual": self.el_residual,
            "edge_slope_indicator": self.edge_slope_indicator,
        }


@dataclass(frozen=True)
class Snapshot:
    time: float
    density: QuantileDensity
    record: FunctionalRecord
    diagnostics: JkoStepDiagnostics | None


@dataclass
class JkoTrajectory:
    """Ordered snapshots of one run; times increase by tau."""

    config: JkoConfig
    mass: float
    p_values: tuple
    context: RecordContext
    snapshots: list = field(default_factory=list)

    @property
    def n_snapshots(self) -> int:
        return len(self.snapshots)

    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def record_series(self, name: str) -> np.ndarray:
        return np.array([getattr(s.record, name) for s in self.snapshots])

    def normp_series(self, p: float) -> np.ndarray:
        return np.array([s.record.normp1_sq[float(p)] for s in self.snapshots])

    def diagnostics_series(self, name: str) -> np.ndarray:
        return np.array([getattr(s.diagnostics, name) for s in self.snapshots
                         if s.diagnostics is not None])

    @property
    def final_density(self) -> QuantileDensity:
        return self.snapshots[-1].density


# ---------------------------------------------------------------------------
# inner energy: value and gradient on position vectors


def _energy_value_grad(X: np.ndarray, ds: float):
    """Discrete E = alpha + beta on a position vector, with its gradient.

    Matches the quadratures of :mod:`thinfilm.functionals` exactly so that
    recorded functionals and optimization certificates agree to the bit.
    """
    n = X.size
    dX = np.diff(X)
    u = ds / dX
    a_val = 0.5 * ds * float(np.sum(X * X))
    du = u[1:] - u[:-1]
    gap = X[2:] - X[:-2]
    b_val = float(np.sum(du * du / gap))
    # quadratic-contact closure of the two edge strips, as in
    # functionals._beta_tail_correction
    b_val += float(2.0 * (u[0] ** 3 + u[-1] ** 3) / (9.0 * ds))

    grad = ds * X.copy()

    p = u / dX  # d u_k / d X_k = -d u_k / d X_{k+1}
    a_coef = np.zeros(n)
    b_coef = np.zeros(n)
    a_coef[1:-1] = 2.0 * du / gap
    b_coef[1:-1] = (du / gap) ** 2
    # each interior term i couples X_{i-1}, X_i, X_{i+1}
    grad[: n - 2] += -a_coef[1: n - 1] * p[: n - 2] + b_coef[1: n - 1]
    grad[1: n - 1] += a_coef[1: n - 1] * (p[1: n - 1] + p[: n - 2])
    grad[2:] += -a_coef[1: n - 1] * p[1: n - 1] - b_coef[1: n - 1]
    # tail-closure gradient
    c0 = (2.0 / 3.0) * u[0] ** 2 * p[0] / ds
    cl = (2.0 / 3.0) * u[-1] ** 2 * p[-1] / ds
    grad[0] += c0
    grad[1] -= c0
    grad[-2] += cl
    grad[-1] -= cl
    return a_val + b_val, grad


def objective(X: np.ndarray, prev: QuantileDensity, config: JkoConfig,
              smyth: SmythHill) -> float:
    """Per-step variational objective at candidate positions X.

    tau * (E[X] - E[equilibrium]) + (1/2)(M/N) sum (X - Xprev)^2, with the
    equilibrium energy in closed form.  X must be monotone with the
    configured increment floor.
    """
    X = np.asarray(X, dtype=float)
    if X.shape != prev.positions.shape:
        raise ValueError("candidate positions must match the previous state")
    eps = _resolve_eps(config, prev)
    if np.any(np.diff(X) < eps):
        raise ValueError("candidate positions violate the monotonicity floor")
    e_val, _ = _energy_value_grad(X, prev.ds)
    move = X - prev.positions
    return float(config.tau * (e_val - smyth.energy())
                 + 0.5 * prev.ds * np.sum(move * move))


def _resolve_eps(config: JkoConfig, q: QuantileDensity) -> float:
    if config.eps_mono is not None:
        return config.eps_mono
    return 1e-9 * (q.positions[-1] - q.positions[0])


def _encode(X: np.ndarray, eps: float) -> np.ndarray:
    gaps = np.diff(X)
    return np.concatenate([[X[0]], np.log(gaps - eps)])


def _decode(theta: np.ndarray, eps: float) -> np.ndarray:
    gaps = eps + np.exp(theta[1:])
    return theta[0] + np.concatenate([[0.0], np.cumsum(gaps)])


def _objective_theta(theta, prev_pos, ds, tau, e_ref, eps):
    X = _decode(theta, eps)
    e_val, e_grad = _energy_value_grad(X, ds)
    move = X - prev_pos
    f = tau * (e_val - e_ref) + 0.5 * ds * float(np.sum(move * move))
    gx = tau * e_grad + ds * move
    # chain rule through X = X0 + cumsum(eps + exp(w))
    rev = np.cumsum(gx[::-1])[::-1]
    g = np.empty_like(theta)
    g[0] = rev[0]
    g[1:] = np.exp(theta[1:]) * rev[1:]
    return f, g


def _minimize_gd(fun, theta0, gtol, max_iters):
    """Backtracking gradient descent; monotone in the objective."""
    theta = theta0.copy()
    f, g = fun(theta)
    alpha = 1.0
    it = 0
    while it < max_iters:
        gnorm = np.max(np.abs(g))
        if gnorm <= gtol:
            break
        moved = False
        for _ in range(50):
            cand = theta - alpha * g
            fc, gc = fun(cand)
            if fc <= f - 1e-4 * alpha * np.sum(g * g):
                theta, f, g = cand, fc, gc
                alpha = min(alpha * 1.3, 1e12)
                moved = True
                break
            alpha *= 0.5
        it += 1
        if not moved:
            break
    return theta, f, it


def step(v_prev: QuantileDensity, config: JkoConfig, smyth: SmythHill):
    """One minimizing-movement step.

    Returns the new state and its diagnostics.  The returned pair always
    satisfies the free estimate
    (1/2) W2^2(new, prev) <= tau * (E_rel[prev] - E_rel[new]),
    which is the objective comparison against staying put.
    """
    eps = _resolve_eps(config, v_prev)
    if v_prev.min_gap() <= eps:
        raise StepFailure(
            f"previous state has increments at or below the floor {eps}")
    ds = v_prev.ds
    tau = config.tau
    e_ref = smyth.energy()
    prev_pos = v_prev.positions

    def fun(theta):
        return _objective_theta(theta, prev_pos, ds, tau, e_ref, eps)

    theta0 = _encode(prev_pos, eps)
    f0, g0 = fun(theta0)
    gtol = config.inner_tol * max(float(np.max(np.abs(g0))), 1e-300)

    if config.inner_method == "gd":
        theta, f_final, iters = _minimize_gd(fun, theta0, gtol, config.max_inner_iters)
    else:
        res = minimize(
            fun, theta0, jac=True, method="L-BFGS-B",
            options={"maxiter": config.max_inner_iters, "maxls": 60,
                     "ftol": 1e-18, "gtol": gtol},
        )
        theta, f_final, iters = res.x, float(res.fun), int(res.nit)

    X_new = _decode(theta, eps)
    ok = np.isfinite(f_final) and np.all(np.isfinite(X_new)) and f_final <= f0
    move = X_new - prev_pos
    half_w2_sq = 0.5 * ds * float(np.sum(move * move))
    if not ok:
        diag = JkoStepDiagnostics(f0, f_final, iters, half_w2_sq,
                                  math.nan, math.nan)
        raise StepFailure(
            f"inner solver finished above the initial objective "
            f"({f_final} > {f0})", diagnostics=diag)

    v_new = QuantileDensity(v_prev.mass, X_new)
    diag = JkoStepDiagnostics(
        objective_initial=f0,
        objective_final=f_final,
        inner_iters=iters,
        w2_sq_moved=half_w2_sq,
        el_residual=el_residual(v_new, v_prev, config),
        edge_slope_indicator=_edge_slope(v_new),
    )
    return v_new, diag


def _edge_slope(q: QuantileDensity) -> float:
    """Max |v_x| over the outermost cells of the reconstruction; proxy for
    the degenerate-contact condition v = 0 => v_x = 0 at the free edge."""
    X = q.positions
    u = q.cell_densities()
    mid = 0.5 * (X[:-1] + X[1:])
    zone = max(2, q.n // 20)
    slopes = np.abs(np.diff(u) / np.diff(mid))
    return float(max(np.max(slopes[:zone]), np.max(slopes[-zone:])))


# ---------------------------------------------------------------------------
# optimality-equation residual


def _third_derivative(vals: np.ndarray, h: float) -> np.ndarray:
    """Composite centered third derivative (f(x+3h)-3f(x+h)+3f(x-h)-f(x-3h))
    / (8 h^3); exact through quartics.  Valid on indices 3..n-4."""
    out = np.full_like(vals, np.nan)
    out[3:-3] = (vals[6:] - 3.0 * vals[4:-2] + 3.0 * vals[2:-4] - vals[:-6]) \
        / (8.0 * h**3)
    return out


def el_residual(v_next: QuantileDensity, v_prev: QuantileDensity,
                config: JkoConfig) -> float:
    """Relative mismatch of the per-step optimality equation.

    The optimal map from the new state back to the previous one sends each
    quantile X_i of ``v_next`` to the matching quantile of ``v_prev``; at
    a minimizer it equals x + tau (x v - v v_xxx) evaluated on the new
    state.  v and v_xxx are computed in x-coordinates on a monotone-cubic
    reconstruction of the CDF (differencing quantile coordinates four
    levels deep is far noisier), and the comparison is restricted to the
    interior 80% of the mass to keep edge stencils out of the measure.
    """
    X = v_next.positions
    s = v_next.fractions
    n = X.size
    span = X[-1] - X[0]
    h = 3.0 * span / (n - 1)
    count = int(span / h) + 1
    if count < 16:
        h = span / 15.0
        count = 16
    xg = X[0] + h * np.arange(count)
    cdf = PchipInterpolator(X, s)
    v_grid = np.maximum(cdf.derivative()(xg), 0.0)
    v3_grid = _third_derivative(v_grid, h)

    lo, hi = 0.1 * v_next.mass, 0.9 * v_next.mass
    valid_x = (X >= xg[3]) & (X <= xg[-4])
    sel = (s >= lo) & (s <= hi) & valid_x
    Xs = X[sel]
    v_at = np.interp(Xs, xg, v_grid)
    v3_at = np.interp(Xs, xg[3:-3], v3_grid[3:-3])
    predicted = Xs + config.tau * (Xs * v_at - v_at * v3_at)
    actual = v_prev.positions[sel]
    ds = v_next.ds
    num = math.sqrt(float(np.sum((actual - predicted) ** 2)) * ds)
    scale = config.tau * math.sqrt(
        float(np.sum((np.abs(Xs * v_at) + np.abs(v_at * v3_at)) ** 2)) * ds)
    if scale == 0.0:
        return 0.0
    return num / scale


# ---------------------------------------------------------------------------
# trajectories


def run(
    v0,
    t_final: float,
    config: JkoConfig,
    smyth: SmythHill,
    p_values=(1.5,),
) -> JkoTrajectory:
    """Run the scheme from an initial density until t_final.

    ``v0`` may be a grid density (converted to ``config.n_cells`` quantile
    cells) or a quantile density used as-is.  Every snapshot carries a full
    functional record; a failing step raises :class:`StepFailure` with the
    partial trajectory attached.
    """
    if isinstance(v0, GridDensity):
        q = grid_to_quantile(v0, config.n_cells)
    elif isinstance(v0, QuantileDensity):
        q = v0
    else:
        raise ValueError(f"unsupported initial condition type {type(v0)!r}")
    if abs(q.mass - smyth.mass) > 1e-8 * smyth.mass:
        raise ValueError(
            f"initial mass {q.mass} does not match equilibrium mass {smyth.mass}")
    if config.eps_mono is None:
        eps = 1e-9 * (q.positions[-1] - q.positions[0])
        config = replace(config, eps_mono=eps)
    e0, _ = _energy_value_grad(q.positions, q.ds)
    m4_0 = q.ds * float(np.sum(q.positions**4))
    if not (np.isfinite(e0) and np.isfinite(m4_0)):
        raise ValueError("initial energy and fourth moment must be finite")

    p_values = tuple(float(p) for p in p_values)
    context = make_record_context(
        smyth, (float(q.positions[0]), float(q.positions[-1])),
        points_hint=max(1201, 4 * q.n + 1),
    )
    traj = JkoTrajectory(config=config, mass=q.mass, p_values=p_values,
                         context=context)
    traj.snapshots.append(
        Snapshot(0.0, q, record(q, 0.0, smyth, p_values, context), None))

    n_steps = int(math.ceil(t_final / config.tau - 1e-12)) if t_final > 0 else 0
    for k in range(1, n_steps + 1):
        try:
            q, diag = step(q, config, smyth)
        except StepFailure as exc:
            exc.trajectory = traj
            raise
        t = k * config.tau
        traj.snapshots.append(
            Snapshot(t, q, record(q, t, smyth, p_values, context), diag))
    return traj


# ---------------------------------------------------------------------------
# weak-form residual


def _bump_parts(r: np.ndarray):
    """phi(r) = exp(-1/(1-r^2)) inside |r|<1 with first three derivatives."""
    inside = np.abs(r) < 1.0 - 1e-12
    rr = np.where(inside, r, 0.0)
    w = 1.0 - rr * rr
    u = 1.0 / w
    up = 2.0 * rr * u**2
    upp = 2.0 * u**2 + 8.0 * rr**2 * u**3
    uppp = 24.0 * rr * u**3 + 48.0 * rr**3 * u**4
    phi = np.where(inside, np.exp(-u), 0.0)
    g1 = -up
    g2 = -upp
    g3 = -uppp
    d1 = np.where(inside, g1 * phi, 0.0)
    d2 = np.where(inside, (g2 + g1 * g1) * phi, 0.0)
    d3 = np.where(inside, (g3 + 3.0 * g1 * g2 + g1**3) * phi, 0.0)
    return phi, d1, d2, d3


@dataclass(frozen=True)
class BumpTestFunction:
    """Tensor product of smooth compactly supported bumps in x and t."""

    x_center: float
    x_width: float
    t_center: float
    t_width: float

    def _x(self, x):
        return _bump_parts((np.asarray(x, dtype=float) - self.x_center) / self.x_width)

    def _t(self, t):
        return _bump_parts((np.asarray(t, dtype=float) - self.t_center) / self.t_width)

    def zeta(self, x, t):
        return self._x(x)[0] * self._t(t)[0]

    def zeta_t(self, x, t):
        return self._x(x)[0] * self._t(t)[1] / self.t_width

    def zeta_x(self, x, t):
        return self._x(x)[1] * self._t(t)[0] / self.x_width

    def zeta_xx(self, x, t):
        return self._x(x)[2] * self._t(t)[0] / self.x_width**2

    def zeta_xxx(self, x, t):
        return self._x(x)[3] * self._t(t)[0] / self.x_width**3


def default_test_functions(traj: JkoTrajectory) -> list[BumpTestFunction]:
    """Three bumps across the spatial extent, one time-bump spanning the run."""
    t_hi = traj.snapshots[-1].time
    ctx = traj.context
    lo, hi = ctx.x_min, ctx.x_min + ctx.dx * (ctx.count - 1)
    mid = 0.5 * (lo + hi)
    w = 0.5 * (hi - lo)
    return [
        BumpTestFunction(mid, 0.8 * w, 0.5 * t_hi, 0.5 * t_hi),
        BumpTestFunction(mid - 0.3 * w, 0.5 * w, 0.5 * t_hi, 0.5 * t_hi),
        BumpTestFunction(mid + 0.3 * w, 0.5 * w, 0.5 * t_hi, 0.5 * t_hi),
    ]


def weak_form_residual(traj: JkoTrajectory, test_functions=None) -> np.ndarray:
    """Space-time weak-form residual of the flow equation per test function.

    For v_t = (xv - v v_xxx)_x the distributional formulation against a
    smooth compactly supported zeta(x, t) reads, after moving all
    derivatives of the fourth-order term onto zeta,

        integral of [-2 v zeta_t + 2 x v zeta_x
                     - 3 v_x^2 zeta_xx - 2 v v_x zeta_xxx] dx dt  =  0 .

    The residual is this integral over the trajectory's Eulerian
    reconstruction, normalized by the L1 size of its integrand pieces;
    it tends to 0 under time-step and cell refinement on smooth runs.
    """
    if traj.n_snapshots < 10:
        raise ValueError("need at least 10 snapshots for the space-time residual")
    if test_functions is None:
        test_functions = default_test_functions(traj)
    ctx = traj.context
    xg = ctx.x
    times = traj.times()
    n_t = times.size
    v_all = np.empty((n_t, xg.size))
    vx_all = np.empty_like(v_all)
    for i, snap in enumerate(traj.snapshots):
        g = quantile_to_grid(snap.density, ctx.x_min, ctx.dx, ctx.count)
        v_all[i] = g.values
        vx_all[i] = np.gradient(g.values, ctx.dx)

    out = np.empty(len(test_functions))
    for j, zf in enumerate(test_functions):
        num_t = np.empty(n_t)
        den_t = np.empty(n_t)
        for i, t in enumerate(times):
            zt = zf.zeta_t(xg, t)
            zx = zf.zeta_x(xg, t)
            zxx = zf.zeta_xx(xg, t)
            zxxx = zf.zeta_xxx(xg, t)
            v = v_all[i]
            vx = vx_all[i]
            pieces = np.stack([
                -2.0 * v * zt,
                2.0 * xg * v * zx,
                -3.0 * vx * vx * zxx,
                -2.0 * v * vx * zxxx,
            ])
            num_t[i] = np.trapz(pieces.sum(axis=0), dx=ctx.dx)
            den_t[i] = np.trapz(np.abs(pieces).sum(axis=0), dx=ctx.dx)
        num = float(np.trapz(num_t, times))
        den = float(np.trapz(den_t, times))
        out[j] = 0.0 if den == 0.0 else abs(num) / den
    return out
