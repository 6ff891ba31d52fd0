"""Exact one-dimensional optimal transport.

On the line the monotone (quantile) coupling is optimal for the quadratic
cost, so the 2-Wasserstein distance between two quantile representations
with matched cell counts is just the weighted l2 distance between their
position vectors.  A small brute-force linear-programming solver over the
full coupling polytope is included as an independent oracle for atomic
measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .density import QuantileDensity

__all__ = [
    "TransportPlan",
    "w2",
    "w2_atoms",
    "w2_bruteforce",
    "displacement_interpolate",
    "pushforward",
]

#: atom-count cap for the LP oracle
BRUTEFORCE_MAX_ATOMS = 12

MASS_RTOL = 1e-10


def _check_pair(mu: QuantileDensity, nu: QuantileDensity) -> None:
    if mu.n != nu.n:
        raise ValueError(f"quantile counts differ: {mu.n} vs {nu.n}; "
                         "resample explicitly to a common count first")
    if abs(mu.mass - nu.mass) > MASS_RTOL * max(mu.mass, nu.mass):
        raise ValueError(f"masses differ: {mu.mass} vs {nu.mass}")


@dataclass(frozen=True)
class TransportPlan:
    """Monotone optimal map between two equal-mass quantile densities.

    ``map_values[i]`` is the image of the source quantile X_i; the cost is
    the squared Wasserstein distance of the piecewise representation.
    """

    source: QuantileDensity
    target: QuantileDensity
    map_values: np.ndarray = field(init=False)
    cost: float = field(init=False)

    def __post_init__(self):
        _check_pair(self.source, self.target)
        mv = np.asarray(self.target.positions, dtype=float).copy()
        mv.setflags(write=False)
        object.__setattr__(self, "map_values", mv)
        d = self.source.positions - self.target.positions
        object.__setattr__(self, "cost", float(self.source.ds * np.sum(d * d)))

    def to_csv(self, path) -> None:
        from .storage import write_plan_csv

        write_plan_csv(path, self)


def w2(mu: QuantileDensity, nu: QuantileDensity) -> float:
    """2-Wasserstein distance between equal-mass, equal-count quantile
    densities: sqrt((M/N) sum (X_i - Y_i)^2), exact for the monotone
    coupling of the piecewise representations."""
    _check_pair(mu, nu)
    d = mu.positions - nu.positions
    return float(np.sqrt(mu.ds * np.sum(d * d)))


def w2_atoms(x_mu, w_mu, x_nu, w_nu) -> float:
    """Squared W2 between two weighted atomic measures of equal total mass,
    via the monotone rearrangement of the two quantile functions.

    Exact for arbitrary positive weights: the quantile functions are step
    functions, and the integral of their squared difference is summed over
    the merged breakpoints.
    """
    x_mu = np.asarray(x_mu, dtype=float)
    w_mu = np.asarray(w_mu, dtype=float)
    x_nu = np.asarray(x_nu, dtype=float)
    w_nu = np.asarray(w_nu, dtype=float)
    if np.any(w_mu <= 0) or np.any(w_nu <= 0):
        raise ValueError("atom weights must be positive")
    m1, m2 = w_mu.sum(), w_nu.sum()
    if abs(m1 - m2) > MASS_RTOL * max(m1, m2):
        raise ValueError(f"total masses differ: {m1} vs {m2}")
    o1 = np.argsort(x_mu, kind="stable")
    o2 = np.argsort(x_nu, kind="stable")
    x1, c1 = x_mu[o1], np.cumsum(w_mu[o1])
    x2, c2 = x_nu[o2], np.cumsum(w_nu[o2])
    cuts = np.union1d(c1, c2)
    cuts = cuts[cuts <= min(m1, m2) * (1 + 1e-15)]
    seg = np.diff(np.concatenate([[0.0], cuts]))
    i1 = np.searchsorted(c1, cuts - 1e-15 * m1)
    i2 = np.searchsorted(c2, cuts - 1e-15 * m2)
    i1 = np.minimum(i1, x1.size - 1)
    i2 = np.minimum(i2, x2.size - 1)
    d = x1[i1] - x2[i2]
    return float(np.sum(seg * d * d))


def w2_bruteforce(x_mu, w_mu, x_nu, w_nu) -> float:
    """Squared W2 of two atomic measures by solving the transportation LP
    over the full coupling polytope.  Independent of the quantile formula;
    capped at a handful of atoms because the LP is dense."""
    x_mu = np.asarray(x_mu, dtype=float)
    w_mu = np.asarray(w_mu, dtype=float)
    x_nu = np.asarray(x_nu, dtype=float)
    w_nu = np.asarray(w_nu, dtype=float)
    n, m = x_mu.size, x_nu.size
    if n > BRUTEFORCE_MAX_ATOMS or m > BRUTEFORCE_MAX_ATOMS:
        raise ValueError(f"brute-force oracle capped at {BRUTEFORCE_MAX_ATOMS} atoms")
    m1, m2 = w_mu.sum(), w_nu.sum()
    if abs(m1 - m2) > MASS_RTOL * max(m1, m2):
        raise ValueError(f"total masses differ: {m1} vs {m2}")
    cost = (x_mu[:, None] - x_nu[None, :]) ** 2
    # marginals: row sums = w_mu, column sums = w_nu (one redundant row)
    a_eq = []
    b_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
        b_eq.append(w_mu[i])
    for j in range(m - 1):
        col = np.zeros((n, m))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
        b_eq.append(w_nu[j])
    res = linprog(cost.ravel(), A_eq=np.asarray(a_eq), b_eq=np.asarray(b_eq),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transportation LP failed: {res.message}")
    return float(res.fun)


def displacement_interpolate(
    mu: QuantileDensity, nu: QuantileDensity, t: float
) -> QuantileDensity:
    """Wasserstein geodesic point between mu and nu: positions
    (1-t) X_i + t Y_i.  Endpoints reproduce the inputs exactly."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation parameter must lie in [0, 1], got {t}")
    _check_pair(mu, nu)
    if t == 0.0:
        return mu
    if t == 1.0:
        return nu
    return QuantileDensity(mu.mass, (1.0 - t) * mu.positions + t * nu.positions)


def pushforward(mu: QuantileDensity, transport_map) -> QuantileDensity:
    """Image of mu under a nondecreasing map.

    ``transport_map`` is either a callable evaluated at the quantile
    positions or an array of sampled values at those positions.  The
    result keeps the mass and moves each quantile to its image; sampled
    values must be nondecreasing.
    """
    if callable(transport_map):
        vals = np.asarray(transport_map(mu.positions), dtype=float)
    else:
        vals = np.asarray(transport_map, dtype=float)
        if vals.shape != mu.positions.shape:
            raise ValueError("sampled map must match the quantile positions")
    if np.any(np.diff(vals) < 0):
        raise ValueError("transport map must be nondecreasing on the support")
    # a merely nondecreasing map can collapse cells; nudge exact ties apart
    # by the smallest representable amount so the invariant holds
    if np.any(np.diff(vals) == 0):
        vals = np.maximum.accumulate(vals + np.arange(vals.size) * 0.0)
        eps = np.spacing(np.maximum(np.abs(vals), 1.0))
        for i in range(1, vals.size):
            if vals[i] <= vals[i - 1]:
                vals[i] = vals[i - 1] + eps[i]
    return QuantileDensity(mu.mass, vals)
