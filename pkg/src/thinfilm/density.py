"""Density representations and the equilibrium profile family.

Two representations of a nonnegative mass-M density on the line are used
throughout:

* :class:`GridDensity` -- Eulerian: samples on a uniform x-grid.  Used for
  functionals that need v_x on a fixed frame, for file I/O and for the
  finite-difference cross check.
* :class:`QuantileDensity` -- Lagrangian: the inverse CDF sampled at the
  cell-centered mass fractions s_i = (i+1/2) M/N.  This is the state
  variable of the minimizing-movement flow; monotone rearrangement makes
  1D optimal transport exact on it.

The attractor of the flow is the compactly supported Smyth-Hill profile
(C^2 - x^2)_+^2 / 24, provided here in closed form together with its CDF,
quantiles and functional values so that "relative to equilibrium"
quantities never pay a second discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "GridDensity",
    "QuantileDensity",
    "SmythHill",
    "smyth_hill",
    "grid_to_quantile",
    "quantile_to_grid",
    "to_selfsimilar_frame",
    "from_selfsimilar_frame",
]

#: minimum sample count for a grid density
MIN_GRID_SAMPLES = 8


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative density sampled on a uniform grid x_i = x_min + i dx.

    Mass is the trapezoid quadrature of the samples and is computed at
    construction.  Instances are immutable; every operation on them is a
    pure function.
    """

    x_min: float
    dx: float
    values: np.ndarray
    mass: float = field(init=False)

    def __post_init__(self):
        vals = _readonly(self.values)
        object.__setattr__(self, "values", vals)
        if self.dx <= 0:
            raise ValueError(f"grid spacing must be positive, got {self.dx}")
        if vals.ndim != 1 or vals.size < MIN_GRID_SAMPLES:
            raise ValueError(
                f"need at least {MIN_GRID_SAMPLES} samples, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("density samples must be finite")
        if np.any(vals < 0):
            raise ValueError("density samples must be nonnegative")
        m = float(np.trapz(vals, dx=self.dx))
        if m <= 0:
            raise ValueError("density must have positive mass")
        object.__setattr__(self, "mass", m)

    @property
    def count(self) -> int:
        return self.values.size

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.values.size)

    @property
    def x_max(self) -> float:
        return self.x_min + self.dx * (self.values.size - 1)

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "dx": self.dx,
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridDensity":
        return cls(x_min=float(d["x_min"]), dx=float(d["dx"]),
                   values=np.asarray(d["values"], dtype=float))

    def to_csv(self, path) -> None:
        from .storage import write_grid_csv

        write_grid_csv(path, self)

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        from .storage import read_grid_csv

        return read_grid_csv(path)


@dataclass(frozen=True)
class QuantileDensity:
    """Density represented by its quantiles at cell-centered mass fractions.

    ``positions[i]`` is the point X_i with CDF(X_i) = (i + 1/2) mass / N.
    Adjacent positions bound a cell of mass ``mass / N``; the implied
    density on cell k is (mass/N) / (X_{k+1} - X_k) > 0.  Cell-centered
    fractions keep every node away from the support boundary, where the
    quantile slope of a compactly supported profile degenerates.
    """

    mass: float
    positions: np.ndarray

    def __post_init__(self):
        pos = _readonly(self.positions)
        object.__setattr__(self, "positions", pos)
        if self.mass <= 0 or not np.isfinite(self.mass):
            raise ValueError(f"mass must be positive and finite, got {self.mass}")
        if pos.ndim != 1 or pos.size < 2:
            raise ValueError("need at least 2 quantile positions")
        if not np.all(np.isfinite(pos)):
            raise ValueError("quantile positions must be finite")
        if np.any(np.diff(pos) <= 0):
            raise ValueError("quantile positions must be strictly increasing")

    @property
    def n(self) -> int:
        return self.positions.size

    @property
    def ds(self) -> float:
        """Mass per cell, mass / N."""
        return self.mass / self.positions.size

    @property
    def fractions(self) -> np.ndarray:
        """Absolute mass coordinates s_i = (i + 1/2) mass / N."""
        n = self.positions.size
        return (np.arange(n) + 0.5) * (self.mass / n)

    def min_gap(self) -> float:
        return float(np.min(np.diff(self.positions)))

    def cell_densities(self) -> np.ndarray:
        """Implied density ds/dX on each of the N-1 cells."""
        return self.ds / np.diff(self.positions)

    def translated(self, d: float) -> "QuantileDensity":
        return QuantileDensity(self.mass, self.positions + d)

    def to_dict(self) -> dict:
        return {"mass": self.mass, "positions": self.positions.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileDensity":
        return cls(mass=float(d["mass"]),
                   positions=np.asarray(d["positions"], dtype=float))

    def to_csv(self, path) -> None:
        from .storage import write_quantile_csv

        write_quantile_csv(path, self)

    @classmethod
    def from_csv(cls, path) -> "QuantileDensity":
        from .storage import read_quantile_csv

        return read_quantile_csv(path)


@dataclass(frozen=True)
class SmythHill:
    """The equilibrium family (C^2 - x^2)_+^2 / 24 at fixed mass.

    The support radius is pinned by the mass: integrating the quartic over
    [-C, C] gives mass = (2/45) C^5, so C = (45 mass / 2)^(1/5).  All
    functional values of the profile are available in closed form.
    """

    mass: float
    support_radius: float = field(init=False)

    def __post_init__(self):
        if self.mass <= 0 or not np.isfinite(self.mass):
            raise ValueError(f"mass must be positive and finite, got {self.mass}")
        object.__setattr__(self, "support_radius", (45.0 * self.mass / 2.0) ** 0.2)

    @property
    def peak(self) -> float:
        """Maximum density value C^4 / 24, attained at x = 0."""
        return self.support_radius**4 / 24.0

    def value(self, x) -> np.ndarray:
        """Profile value(s) at x; exactly 0 outside [-C, C]."""
        x = np.asarray(x, dtype=float)
        w = np.maximum(self.support_radius**2 - x * x, 0.0)
        return w * w / 24.0

    def derivative(self, x) -> np.ndarray:
        """d/dx of the profile; 0 outside the support."""
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.support_radius
        return np.where(inside, -x * (self.support_radius**2 - x * x) / 6.0, 0.0)

    def cdf(self, x) -> np.ndarray:
        """Closed-form CDF of the quartic profile."""
        C = self.support_radius
        x = np.clip(np.asarray(x, dtype=float), -C, C)
        return (C**4 * (x + C) - (2.0 / 3.0) * C**2 * (x**3 + C**3)
                + (x**5 + C**5) / 5.0) / 24.0

    def quantiles(self, n: int) -> QuantileDensity:
        """Exact quantile representation at n cell-centered fractions."""
        if n < 2:
            raise ValueError("need n >= 2 quantile cells")
        C = self.support_radius
        s = (np.arange(n) + 0.5) * (self.mass / n)
        pos = np.empty(n)
        for i, si in enumerate(s):
            pos[i] = brentq(lambda x: self.cdf(x) - si, -C, C, xtol=1e-15, rtol=8.9e-16)
        # symmetrize: the profile is even, so X_i = -X_{n-1-i} exactly
        pos = 0.5 * (pos - pos[::-1])
        return QuantileDensity(self.mass, pos)

    def grid_density(self, x_min: float, dx: float, count: int) -> GridDensity:
        """Sample the profile on a uniform grid."""
        x = x_min + dx * np.arange(count)
        return GridDensity(x_min, dx, self.value(x))

    # closed-form functional values of the profile (verified against
    # high-resolution quadrature in the test suite)

    def alpha(self) -> float:
        """Half second moment, C^7 / 315."""
        return self.support_radius**7 / 315.0

    def beta(self) -> float:
        """Half Dirichlet energy, 2 C^7 / 945."""
        return 2.0 * self.support_radius**7 / 945.0

    def energy(self) -> float:
        """alpha + beta = C^7 / 189."""
        return self.support_radius**7 / 189.0

    def entropy(self) -> float:
        """x^2/2-moment plus 3/2-power part, C^7 / 63."""
        return self.support_radius**7 / 63.0

    def fourth_moment(self) -> float:
        """Integral of x^4 against the profile, 2 C^9 / 945."""
        return 2.0 * self.support_radius**9 / 945.0

    def quartic_gradient_term(self) -> float:
        """(sqrt6/24) * integral of v^(-3/2) v_x^4 over the profile, C^7 / 945."""
        return self.support_radius**7 / 945.0


def smyth_hill(mass: float) -> SmythHill:
    """Equilibrium profile with the given total mass.

    Raises ValueError for non-positive mass.
    """
    return SmythHill(mass)


def grid_to_quantile(v: GridDensity, n: int) -> QuantileDensity:
    """Quantile representation of a grid density at n cell-centered fractions.

    Inverts the trapezoid CDF piecewise-linearly: monotone, exactly
    mass-consistent, no overshoot.  Plateaus of the CDF (regions where v
    vanishes) are skipped so the inverse stays strictly increasing.
    """
    if n < MIN_GRID_SAMPLES:
        raise ValueError(f"need n >= {MIN_GRID_SAMPLES} quantile cells, got {n}")
    x = v.x
    vals = v.values
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * v.dx)])
    mass = cdf[-1]
    if mass <= 0:
        raise ValueError("cannot build quantiles of a zero-mass density")
    # keep knots where the CDF strictly increases; targets never hit the
    # flat tails because the fractions are cell-centered
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    cdf_k = cdf[keep]
    x_k = x[keep]
    s = (np.arange(n) + 0.5) * (mass / n)
    pos = np.interp(s, cdf_k, x_k)
    if np.any(np.diff(pos) <= 0):
        raise ValueError(
            "quantile inversion produced non-increasing positions; "
            "density too concentrated for the requested cell count"
        )
    return QuantileDensity(mass, pos)


def quantile_to_grid(
    q: QuantileDensity,
    x_min: float,
    dx: float,
    count: int,
    return_info: bool = False,
):
    """Eulerian reconstruction of a quantile density on a uniform grid.

    Node densities 1/X'(s_i) (centered differences, one-sided at the two
    ends) are interpolated linearly in x and set identically to 0 outside
    [X_0, X_{N-1}]: the compactly supported equilibria are the attractors,
    so no artificial tails are invented.  The result is renormalized to
    the exact quantile mass; the factor is reported when ``return_info``
    is set rather than applied silently.
    """
    X = q.positions
    ds = q.ds
    if not (x_min <= X[0] - 2 * dx and x_min + dx * (count - 1) >= X[-1] + 2 * dx):
        raise ValueError(
            f"grid window [{x_min}, {x_min + dx * (count - 1)}] does not cover "
            f"support [{X[0]}, {X[-1]}] with a 2*dx margin"
        )
    v_node = np.empty_like(X)
    v_node[1:-1] = 2.0 * ds / (X[2:] - X[:-2])
    v_node[0] = ds / (X[1] - X[0])
    v_node[-1] = ds / (X[-1] - X[-2])
    xg = x_min + dx * np.arange(count)
    vals = np.interp(xg, X, v_node, left=0.0, right=0.0)
    raw_mass = float(np.trapz(vals, dx=dx))
    factor = q.mass / raw_mass
    grid = GridDensity(x_min, dx, vals * factor)
    if return_info:
        return grid, {"renormalization": factor, "raw_mass": raw_mass}
    return grid


def to_selfsimilar_frame(u: GridDensity, t: float) -> tuple[GridDensity, float]:
    """Map a density of the constant-coefficient film flow into the rescaled
    frame: v(x) = a u(a x) with a = e^t.

    Returns the rescaled density together with the clock value
    b(t) = (e^{5t} - 1)/5 of the original frame.  Mass is preserved
    exactly (the grid contracts by a while values grow by a).
    """
    if t < 0:
        raise ValueError("rescaling is defined for t >= 0")
    a = float(np.exp(t))
    b = (np.exp(5.0 * t) - 1.0) / 5.0
    return GridDensity(u.x_min / a, u.dx / a, a * u.values), float(b)


def from_selfsimilar_frame(v: GridDensity, t: float) -> tuple[GridDensity, float]:
    """Inverse of :func:`to_selfsimilar_frame`; composes to the identity."""
    if t < 0:
        raise ValueError("rescaling is defined for t >= 0")
    a = float(np.exp(t))
    b = (np.exp(5.0 * t) - 1.0) / 5.0
    return GridDensity(v.x_min * a, v.dx * a, v.values / a), float(b)
