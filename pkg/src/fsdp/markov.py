"""Finite Markov chains.

Validation, simulation, marginal-distribution flows, stationary
distributions, irreducibility, Tauchen discretization of Gaussian
AR(1) processes, first-order stochastic dominance, quantiles, and
geometric-sum valuation.

Distributions are 1-d arrays of nonnegative weights summing to one;
stochastic matrices are square arrays whose rows are distributions.
"""

import warnings
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from . import spectral

ROW_SUM_TOL = 1e-10


class TauchenSpec(NamedTuple):
    """Parameters of the AR(1) process ``x' = rho x + b + nu eps``.

    ``n`` grid points span ``m`` stationary standard deviations either
    side of the stationary mean ``b / (1 - rho)``.
    """

    n: int
    rho: float
    nu: float
    b: float = 0.0
    m: float = 3.0


def require_distribution(weights, tol=ROW_SUM_TOL):
    """Validate and return a finite distribution as a float array."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("distribution must be a nonempty 1-d array")
    if np.any(w < 0):
        raise ValueError("distribution has negative weights")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"weights sum to {w.sum():.12g}, not 1")
    return w


def require_stochastic_matrix(p, tol=ROW_SUM_TOL, repair=False):
    """Validate a stochastic matrix, optionally renormalizing rows.

    Row sums must equal one within ``tol``.  Renormalization happens
    only behind the explicit ``repair`` flag, since silent repair hides
    modeling bugs.
    """
    p = spectral.require_square(p, name="stochastic matrix")
    if np.any(p < 0):
        raise ValueError("stochastic matrix has negative entries")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        if not repair:
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ValueError(f"row sums deviate from 1 by up to {worst:.3g}")
        p = p / sums[:, None]
    return p


def simulate_chain(p, psi0, steps, rng):
    """Simulate a Markov chain path of length ``steps + 1``.

    The initial state is drawn from ``psi0`` and transitions follow the
    rows of ``p``.  Sampling is inverse-CDF against precomputed row
    cumulative sums, so a fixed seed reproduces the path exactly.
    """
    p = require_stochastic_matrix(p)
    psi0 = require_distribution(psi0)
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    row_cum = np.cumsum(p, axis=1)
    init_cum = np.cumsum(psi0)
    uniforms = rng.random(steps + 1)
    path = np.empty(steps + 1, dtype=np.int64)
    path[0] = np.searchsorted(init_cum, uniforms[0], side="right")
    for t in range(steps):
        path[t + 1] = np.searchsorted(row_cum[path[t]], uniforms[t + 1], side="right")
    np.clip(path, 0, p.shape[0] - 1, out=path)
    return path


def update_distribution(psi, p):
    """One step of the marginal-distribution flow: returns ``psi @ p``."""
    psi = require_distribution(psi)
    p = require_stochastic_matrix(p)
    if psi.size != p.shape[0]:
        raise ValueError("distribution and matrix dimensions disagree")
    return psi @ p


def is_irreducible(p):
    """True iff every state reaches every state via positive-probability edges.

    Checks strong connectivity of the support graph: all states must be
    reachable from state 0 in the graph and in its reverse.
    """
    p = require_stochastic_matrix(p)
    adjacency = p > 0
    return _all_reachable(adjacency, 0) and _all_reachable(adjacency.T, 0)


def _all_reachable(adjacency, source):
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[source] = True
    frontier = [source]
    while frontier:
        nxt = adjacency[frontier].any(axis=0) & ~seen
        frontier = np.flatnonzero(nxt).tolist()
        seen |= nxt
    return bool(seen.all())


def stationary_distribution(p, warn_on_reducible=True):
    """Solve ``psi @ p = psi`` with ``psi`` summing to one.

    Uses the linear system ``(p.T - I) psi = 0`` with a normalization
    row appended.  When ``p`` is reducible the stationary distribution
    is not unique; one solution is returned with a warning.
    """
    p = require_stochastic_matrix(p)
    n = p.shape[0]
    if warn_on_reducible and not is_irreducible(p):
        warnings.warn(
            "matrix is reducible: stationary distribution is not unique",
            stacklevel=2,
        )
    a = np.vstack([p.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    psi, *_ = np.linalg.lstsq(a, b, rcond=None)
    psi = np.clip(psi, 0.0, None)
    return psi / psi.sum()


def conditional_expectation(p, h, k=1):
    """Apply the k-step transition matrix to ``h``: returns ``p^k @ h``."""
    p = require_stochastic_matrix(p)
    h = np.asarray(h, dtype=float)
    if h.shape[0] != p.shape[0]:
        raise ValueError("function and matrix dimensions disagree")
    if k < 1:
        raise ValueError("k must be >= 1")
    out = h.copy()
    for _ in range(k):
        out = p @ out
    return out


def geometric_value(beta, p, h):
    """Expected discounted sum ``sum_t beta^t p^t h = inv(I - beta p) h``."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    p = require_stochastic_matrix(p)
    return spectral.neumann_solve(beta * p, np.asarray(h, dtype=float))


def tauchen(spec_or_n, rho=None, nu=None, b=0.0, m=3.0):
    """Discretize a Gaussian AR(1) process onto an equispaced grid.

    Accepts either a :class:`TauchenSpec` or positional parameters
    ``(n, rho, nu, b, m)``.  The grid is centered on the stationary mean
    ``b / (1 - rho)`` and spans ``m`` stationary standard deviations on
    each side.  Transition entries are Gaussian CDF differences computed
    on the demeaned grid; boundary columns absorb the tails, so every
    row sums to one.

    Returns ``(grid, p)``.
    """
    if isinstance(spec_or_n, TauchenSpec):
        spec = spec_or_n
    else:
        spec = TauchenSpec(n=spec_or_n, rho=rho, nu=nu, b=b, m=m)
    if not abs(spec.rho) < 1:
        raise ValueError("persistence must satisfy |rho| < 1")
    if spec.nu <= 0:
        raise ValueError("innovation standard deviation must be positive")
    if spec.n < 2:
        raise ValueError("grid size must be at least 2")
    if spec.m <= 0:
        raise ValueError("grid width m must be positive")

    sigma_x = spec.nu / np.sqrt(1.0 - spec.rho**2)
    grid = np.linspace(-spec.m * sigma_x, spec.m * sigma_x, spec.n)
    step = grid[1] - grid[0]
    half = step / 2.0

    centered = grid[None, :] - spec.rho * grid[:, None]
    p = ndtr((centered + half) / spec.nu) - ndtr((centered - half) / spec.nu)
    p[:, 0] = ndtr((centered[:, 0] + half) / spec.nu)
    p[:, -1] = 1.0 - ndtr((centered[:, -1] - half) / spec.nu)

    mu_x = spec.b / (1.0 - spec.rho)
    return grid + mu_x, require_stochastic_matrix(p)


def counter_cdf(weights, values=None):
    """Counter-CDF ``G(v) = P(X > v)`` evaluated at each support point.

    ``values`` orders the support; when omitted the support is taken in
    index order.
    """
    w = require_distribution(weights)
    if values is None:
        order = np.arange(w.size)
    else:
        order = np.argsort(np.asarray(values), kind="stable")
    sorted_w = w[order]
    g_sorted = 1.0 - np.cumsum(sorted_w)
    g = np.empty_like(w)
    g[order] = g_sorted
    return g


def stochastically_dominates(phi, psi, values=None, tol=1e-12):
    """First-order dominance check: True iff ``psi`` dominates ``phi``.

    Equivalent to the counter-CDF comparison ``G_phi <= G_psi``
    pointwise on the common, totally ordered support, i.e. every
    increasing function has a weakly larger mean under ``psi``.
    """
    phi = require_distribution(phi)
    psi = require_distribution(psi)
    if phi.size != psi.size:
        raise ValueError("distributions must share a common support")
    g_phi = counter_cdf(phi, values)
    g_psi = counter_cdf(psi, values)
    return bool(np.all(g_phi <= g_psi + tol))


def is_monotone_increasing(p, values=None):
    """True iff higher states shift the next-state distribution up.

    Checks that consecutive rows (in the order given by ``values``) are
    ranked by first-order stochastic dominance; transitivity extends the
    ranking to all pairs.
    """
    p = require_stochastic_matrix(p)
    if values is None:
        row_order = np.arange(p.shape[0])
    else:
        row_order = np.argsort(np.asarray(values), kind="stable")
    for lower, higher in zip(row_order[:-1], row_order[1:]):
        if not stochastically_dominates(p[lower], p[higher], values):
            return False
    return True


def quantile(tau, values, phi, tol=1e-12):
    """The tau-th quantile of a discrete random variable.

    Returns the smallest value whose cumulative probability (after
    sorting the support by value) reaches ``tau``.  Ties go to the
    first value reaching the cumulative mass.
    """
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    phi = require_distribution(phi)
    values = np.asarray(values, dtype=float)
    if values.size != phi.size:
        raise ValueError("values and weights must align")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(phi[order])
    idx = int(np.searchsorted(cum, tau - tol, side="left"))
    idx = min(idx, values.size - 1)
    return float(values[order][idx])


def conditional_quantile(tau, v, p):
    """Per-state tau-th quantile of ``v`` under each row of ``p``."""
    p = require_stochastic_matrix(p)
    v = np.asarray(v, dtype=float)
    return np.array([quantile(tau, v, row) for row in p])
