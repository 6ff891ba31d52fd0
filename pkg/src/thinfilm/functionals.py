"""Scalar functionals of a density, on either representation.

Everything the flow dissipates or conserves is computed here: the energy
E = (1/2) int (v_x^2 + x^2 v), its split into half second moment (alpha)
and half Dirichlet energy (beta), the entropy
H = int (x^2/2 v + 2 sqrt(2/3) v^{3/2}), the entropy dissipation
D = int (x + sqrt6 (sqrt v)_x)^2 v, general even moments, sup norm, and
weighted Sobolev norms of differences.  Relative versions subtract the
closed-form value of the equal-mass equilibrium profile, never a sampled
one.

Quantile-form quadratures.  A quantile state carries exact cell masses:
the implied density u_k = ds/(X_{k+1}-X_k) is the exact x-average of v
over cell k.  Derivative-bearing integrands (beta, D, the quartic term)
are therefore assembled in x-coordinates from the u_k with
quadratic-exact nonuniform stencils.  These agree with the mass-coordinate
forms ((X'')^2/(X')^5 for beta, etc.) to second order in the interior and
behave much better in the outermost cells, where the quantile slope of a
compactly supported profile blows up like a cube root and one-sided
stencils in s lose several digits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import GridDensity, QuantileDensity, SmythHill, quantile_to_grid

__all__ = [
    "FunctionalRecord",
    "RecordContext",
    "alpha",
    "beta",
    "energy",
    "energy_parts",
    "entropy",
    "moment",
    "sup_norm",
    "dissipation",
    "dissipation_literal_gradient",
    "cross_dissipation_gap",
    "weighted_norm_sq",
    "l1_distance",
    "make_record_context",
    "record",
]

SQRT6 = np.sqrt(6.0)
ENTROPY_POWER_COEF = 2.0 * np.sqrt(2.0 / 3.0)

#: mass-mismatch tolerance (relative) for relative functionals
MASS_RTOL = 1e-8


# ---------------------------------------------------------------------------
# quantile-form building blocks


def _cells(q: QuantileDensity):
    """Cell midpoints, widths and exact average densities."""
    X = q.positions
    dX = np.diff(X)
    mid = 0.5 * (X[:-1] + X[1:])
    u = q.ds / dX
    return mid, dX, u


def _nonuniform_first_derivative(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """d f/d x on a nonuniform 1D point set, quadratic-exact.

    Three-point stencils throughout, one-sided at the two ends.
    """
    d = np.empty_like(f)
    h1 = x[1:-1] - x[:-2]
    h2 = x[2:] - x[1:-1]
    d[1:-1] = (-h2 / (h1 * (h1 + h2)) * f[:-2]
               + (h2 - h1) / (h1 * h2) * f[1:-1]
               + h1 / (h2 * (h1 + h2)) * f[2:])
    a, b = x[1] - x[0], x[2] - x[1]
    d[0] = (-(2 * a + b) / (a * (a + b)) * f[0]
            + (a + b) / (a * b) * f[1]
            - a / (b * (a + b)) * f[2])
    a, b = x[-2] - x[-3], x[-1] - x[-2]
    d[-1] = (b / (a * (a + b)) * f[-3]
             - (a + b) / (a * b) * f[-2]
             + (a + 2 * b) / (b * (a + b)) * f[-1])
    return d


def _nonuniform_second_derivative(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """d^2 f/d x^2 on a nonuniform point set, quadratic-exact; end values
    copy their interior neighbors (only ever used inside integrals whose
    integrand vanishes at the support edge)."""
    d = np.empty_like(f)
    h1 = x[1:-1] - x[:-2]
    h2 = x[2:] - x[1:-1]
    d[1:-1] = 2.0 * (f[:-2] / (h1 * (h1 + h2))
                     - f[1:-1] / (h1 * h2)
                     + f[2:] / (h2 * (h1 + h2)))
    d[0] = d[1]
    d[-1] = d[-2]
    return d


def _node_slopes(q: QuantileDensity) -> np.ndarray:
    """X'(s_i) by centered differences in s, one-sided at the ends."""
    X = q.positions
    ds = q.ds
    out = np.empty_like(X)
    out[1:-1] = (X[2:] - X[:-2]) / (2.0 * ds)
    out[0] = (X[1] - X[0]) / ds
    out[-1] = (X[-1] - X[-2]) / ds
    return out


def _cell_mass_weights(q: QuantileDensity) -> np.ndarray:
    """Mass carried by each cell, with the two half-cell tails folded onto
    the outermost cells so the weights sum exactly to the total mass."""
    w = np.full(q.n - 1, q.ds)
    w[0] += 0.5 * q.ds
    w[-1] += 0.5 * q.ds
    return w


# ---------------------------------------------------------------------------
# functionals


def _require_density(v):
    if not isinstance(v, (GridDensity, QuantileDensity)):
        raise ValueError(f"expected GridDensity or QuantileDensity, got {type(v)!r}")
    if isinstance(v, GridDensity) and v.count < 8:
        raise ValueError("grid density too small for functional evaluation")
    if isinstance(v, QuantileDensity) and v.n < 8:
        raise ValueError("quantile density too small for functional evaluation")


def alpha(v) -> float:
    """Half second moment, (1/2) int x^2 v dx."""
    _require_density(v)
    if isinstance(v, QuantileDensity):
        return float(0.5 * v.ds * np.sum(v.positions**2))
    return float(0.5 * np.trapz(v.x**2 * v.values, dx=v.dx))


def _beta_tail_correction(q: QuantileDensity) -> float:
    """Dirichlet energy carried by the two strips outside the outermost
    cell midpoints.

    The node-based quadrature of int v_x^2 covers [m_0, m_{N-2}] only; a
    compactly supported profile still holds O(ds) of Dirichlet energy in
    each strip because the strip width scales like ds^(1/3).  Each strip
    is closed with the quadratic-contact model v = a (x - edge)^2 (the
    generic touchdown of this flow's attractors, cf. the v=0 => v_x=0
    diagnostic), calibrated to the strip mass ds and the edge cell
    density.  The resulting half-integral of v_x^2 is a ds per side with
    a = u_edge^3 / (9 ds^2).
    """
    u = q.cell_densities()
    ds = q.ds
    return float(2.0 * (u[0] ** 3 + u[-1] ** 3) / (9.0 * ds))


def beta(v) -> float:
    """Half Dirichlet energy, (1/2) int v_x^2 dx."""
    _require_density(v)
    if isinstance(v, QuantileDensity):
        X = v.positions
        _, _, u = _cells(v)
        du = np.diff(u)
        interior = float(np.sum(du * du / (X[2:] - X[:-2])))
        return interior + _beta_tail_correction(v)
    vx = np.gradient(v.values, v.dx)
    return float(0.5 * np.trapz(vx * vx, dx=v.dx))


def energy_parts(v) -> tuple[float, float]:
    """(alpha, beta) of a density."""
    return alpha(v), beta(v)


def energy(v) -> float:
    """E = alpha + beta; the split is exact by construction."""
    a, b = energy_parts(v)
    return a + b


def entropy(v) -> float:
    """H = int (x^2/2) v + 2 sqrt(2/3) int v^{3/2}."""
    _require_density(v)
    if isinstance(v, QuantileDensity):
        slope = _node_slopes(v)
        power = v.ds * np.sum(slope**-0.5)
        return float(0.5 * v.ds * np.sum(v.positions**2) + ENTROPY_POWER_COEF * power)
    vals = v.values
    return float(np.trapz(0.5 * v.x**2 * vals + ENTROPY_POWER_COEF * vals**1.5,
                          dx=v.dx))


def moment(v, order: int = 2) -> float:
    """int |x|^order v dx for even moments (order 2 and 4 are the ones used)."""
    _require_density(v)
    if order < 0:
        raise ValueError("moment order must be nonnegative")
    if isinstance(v, QuantileDensity):
        return float(v.ds * np.sum(np.abs(v.positions) ** order))
    return float(np.trapz(np.abs(v.x) ** order * v.values, dx=v.dx))


def sup_norm(v) -> float:
    """Max density value (max cell average on the quantile representation)."""
    _require_density(v)
    if isinstance(v, QuantileDensity):
        return float(np.max(v.cell_densities()))
    return float(np.max(v.values))


def _grid_positive_mask(vals: np.ndarray) -> np.ndarray:
    return vals > 1e-13 * np.max(vals)


def dissipation(v) -> tuple[float, float]:
    """Entropy dissipation and its quartic-gradient companion.

    Returns ``(D, extra)`` where ``D = int (x + sqrt6 (sqrt v)_x)^2 v dx``
    and ``extra = (sqrt6/24) int v^{-3/2} v_x^4 dx``, both over {v > 0}.
    The square root, not v itself, is differentiated in D: that is the
    combination produced by the first variation of H, and it vanishes
    identically on the equilibrium family.  The literal-gradient variant
    is available as :func:`dissipation_literal_gradient`.
    """
    _require_density(v)
    if isinstance(v, QuantileDensity):
        mid, dX, u = _cells(v)
        w = np.sqrt(u)
        wx = _nonuniform_first_derivative(mid, w)
        r = mid + SQRT6 * wx
        d_val = float(np.sum(_cell_mass_weights(v) * r * r))
        vx = _nonuniform_first_derivative(mid, u)
        extra = float(SQRT6 / 24.0 * np.sum(u**-1.5 * vx**4 * dX))
        return d_val, extra
    vals = v.values
    mask = _grid_positive_mask(vals)
    sq = np.sqrt(vals)
    sqx = np.gradient(sq, v.dx)
    r = np.where(mask, v.x + SQRT6 * sqx, 0.0)
    d_val = float(np.trapz(r * r * vals, dx=v.dx))
    vx = np.gradient(vals, v.dx)
    integrand = np.where(mask, vx**4 * np.where(mask, vals, 1.0) ** -1.5, 0.0)
    extra = float(SQRT6 / 24.0 * np.trapz(integrand, dx=v.dx))
    return d_val, extra


def dissipation_literal_gradient(v) -> float:
    """int (x + sqrt6 v_x)^2 v dx: the same quantity with v_x in place of
    (sqrt v)_x.  Kept for comparison; it does not vanish at equilibrium."""
    _require_density(v)
    if isinstance(v, QuantileDensity):
        mid, _, u = _cells(v)
        vx = _nonuniform_first_derivative(mid, u)
        r = mid + SQRT6 * vx
        return float(np.sum(_cell_mass_weights(v) * r * r))
    vals = v.values
    vx = np.gradient(vals, v.dx)
    r = v.x + SQRT6 * vx
    return float(np.trapz(r * r * vals, dx=v.dx))


def cross_dissipation_gap(v) -> float:
    """Gap between the energy-entropy cross dissipation and D.

    For a state v this is

        (sqrt6/3) int v^{3/2}  -  3 int v_x^2
        + (sqrt6/2) int sqrt(v) v_xx^2  +  (sqrt6/24) int v^{-3/2} v_x^4,

    the exact amount by which int (x + sqrt6 (sqrt v)_x)(x - v_xxx) v dx
    exceeds D[v] after integrating by parts on compactly supported states
    with v_x -> 0 at the support edge.  It vanishes on every translate and
    dilate of the equilibrium profile and is nonnegative near that family,
    so the per-step entropy inequality can be checked in a form that is
    tight at equilibrium.
    """
    _require_density(v)
    if isinstance(v, QuantileDensity):
        mid, dX, u = _cells(v)
        wmass = _cell_mass_weights(v)
        s32 = float(np.sum(wmass * np.sqrt(u)))
        vx2 = 2.0 * beta(v)
        vxx = _nonuniform_second_derivative(mid, u)
        svxx2 = float(np.sum(np.sqrt(u) * vxx * vxx * dX))
        _, extra = dissipation(v)
        return float(SQRT6 / 3.0 * s32 - 3.0 * vx2 + SQRT6 / 2.0 * svxx2 + extra)
    vals = v.values
    mask = _grid_positive_mask(vals)
    s32 = float(np.trapz(vals**1.5, dx=v.dx))
    vx = np.gradient(vals, v.dx)
    vx2 = float(np.trapz(vx * vx, dx=v.dx))
    vxx = np.gradient(vx, v.dx)
    svxx2 = float(np.trapz(np.sqrt(vals) * vxx * vxx, dx=v.dx))
    _, extra = dissipation(v)
    return float(SQRT6 / 3.0 * s32 - 3.0 * vx2 + SQRT6 / 2.0 * svxx2 + extra)


def weighted_norm_sq(a: GridDensity, b: GridDensity, m: float) -> float:
    """Squared weighted Sobolev norm of the difference a - b:

        int (1 + |x|^{2m}) (a - b)^2 dx + int (a_x - b_x)^2 dx .

    Both densities must live on the identical grid.
    """
    if not (0 <= m <= 2):
        raise ValueError(f"weight exponent must lie in [0, 2], got {m}")
    if (a.x_min != b.x_min) or (a.dx != b.dx) or (a.count != b.count):
        raise ValueError("weighted norms need both densities on the identical grid")
    f = a.values - b.values
    fx = np.gradient(f, a.dx)
    w = 1.0 + np.abs(a.x) ** (2.0 * m)
    return float(np.trapz(w * f * f, dx=a.dx) + np.trapz(fx * fx, dx=a.dx))


def _weighted_norm_sq_arrays(x: np.ndarray, dx: float, f: np.ndarray, m: float) -> float:
    fx = np.gradient(f, dx)
    w = 1.0 + np.abs(x) ** (2.0 * m)
    return float(np.trapz(w * f * f, dx=dx) + np.trapz(fx * fx, dx=dx))


def l1_distance(a: GridDensity, b: GridDensity) -> float:
    """int |a - b| dx on the identical grid."""
    if (a.x_min != b.x_min) or (a.dx != b.dx) or (a.count != b.count):
        raise ValueError("L1 distance needs both densities on the identical grid")
    return float(np.trapz(np.abs(a.values - b.values), dx=a.dx))


# ---------------------------------------------------------------------------
# snapshot records


@dataclass(frozen=True)
class RecordContext:
    """Fixed Eulerian frame for the norm fields of a trajectory's records.

    Holds the common grid and the closed-form equilibrium samples so every
    snapshot's reconstruction is compared against the same reference.
    """

    x_min: float
    dx: float
    count: int
    reference: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.count)


def make_record_context(
    smyth: SmythHill,
    support: tuple[float, float],
    points_hint: int = 1601,
) -> RecordContext:
    """Build the record frame covering both the given support interval and
    the equilibrium support, with a 15% margin."""
    C = smyth.support_radius
    lo = min(support[0], -C)
    hi = max(support[1], C)
    pad = 0.15 * (hi - lo) + 1e-6
    lo, hi = lo - pad, hi + pad
    count = max(int(points_hint), 201)
    dx = (hi - lo) / (count - 1)
    x = lo + dx * np.arange(count)
    return RecordContext(lo, dx, count, _readonly_ref(smyth.value(x)))


def _readonly_ref(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FunctionalRecord:
    """Every scalar functional of one snapshot at one time."""

    time: float
    E: float
    H: float
    alpha: float
    beta: float
    D: float
    extra_dissipation: float
    M4: float
    sup_v: float
    E_rel: float
    H_rel: float
    alpha_rel: float
    beta_rel: float
    norm11_sq: float
    l1_dist: float
    normp1_sq: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "time": self.time, "E": self.E, "H": self.H,
            "alpha": self.alpha, "beta": self.beta, "D": self.D,
            "extra_dissipation": self.extra_dissipation,
            "M4": self.M4, "sup_v": self.sup_v,
            "E_rel": self.E_rel, "H_rel": self.H_rel,
            "alpha_rel": self.alpha_rel, "beta_rel": self.beta_rel,
            "norm11_sq": self.norm11_sq, "l1_dist": self.l1_dist,
        }
        for p, val in self.normp1_sq.items():
            d[f"normp1_sq_{p:g}"] = val
        return d

    @staticmethod
    def csv_columns(p_values=()) -> list[str]:
        cols = ["time", "E", "H", "alpha", "beta", "D", "extra_dissipation",
                "M4", "sup_v", "E_rel", "H_rel", "alpha_rel", "beta_rel",
                "norm11_sq", "l1_dist"]
        cols += [f"normp1_sq_{p:g}" for p in p_values]
        return cols


def record(
    v,
    time: float,
    smyth: SmythHill,
    p_values=(1.5,),
    context: RecordContext | None = None,
) -> FunctionalRecord:
    """Evaluate every functional of one snapshot.

    The relative fields subtract the closed-form equilibrium values; the
    norm fields compare an Eulerian reconstruction against the closed-form
    profile sampled on the same grid.  The mass of ``v`` must match the
    equilibrium mass to within 1e-8 relative.
    """
    _require_density(v)
    if abs(v.mass - smyth.mass) > MASS_RTOL * smyth.mass:
        raise ValueError(
            f"mass mismatch: density has {v.mass}, equilibrium has {smyth.mass}"
        )
    a = alpha(v)
    b = beta(v)
    e = a + b
    h = entropy(v)
    d_val, extra = dissipation(v)
    m4 = moment(v, 4)
    sup = sup_norm(v)

    if isinstance(v, QuantileDensity):
        if context is None:
            context = make_record_context(
                smyth, (float(v.positions[0]), float(v.positions[-1]))
            )
        grid = quantile_to_grid(v, context.x_min, context.dx, context.count)
        diff = grid.values - context.reference
        x = context.x
        dxg = context.dx
    else:
        x = v.x
        dxg = v.dx
        diff = v.values - smyth.value(x)

    norm11 = _weighted_norm_sq_arrays(x, dxg, diff, 1.0)
    l1 = float(np.trapz(np.abs(diff), dx=dxg))
    normp = {float(p): _weighted_norm_sq_arrays(x, dxg, diff, float(p))
             for p in p_values}

    return FunctionalRecord(
        time=float(time), E=e, H=h, alpha=a, beta=b, D=d_val,
        extra_dissipation=extra, M4=m4, sup_v=sup,
        E_rel=e - smyth.energy(), H_rel=h - smyth.entropy(),
        alpha_rel=a - smyth.alpha(), beta_rel=b - smyth.beta(),
        norm11_sq=norm11, l1_dist=l1, normp1_sq=normp,
    )
