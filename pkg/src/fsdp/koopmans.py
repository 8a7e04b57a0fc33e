"""Recursive-preference valuation.

Certainty-equivalent operators, aggregators, Koopmans operators (their
composition), and stability-aware solvers for the lifetime values they
define: Blackwell contraction iteration, the power-transformed-affine
conjugacy used for Epstein-Zin preferences, Uzawa linear reduction, and
order-interval bracketing.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import fixed_point, markov, spectral
from .errors import ConvergenceError, StabilityError


def _weighted_logsumexp_rows(vals, weights):
    """Stable ``log(weights @ exp(vals))`` per row of ``weights``.

    Entries with zero weight are excluded from the max-shift, so large
    values off the support cannot poison the result.
    """
    masked = np.where(weights > 0, vals[None, :], -np.inf)
    shift = masked.max(axis=1)
    total = np.einsum("ij,ij->i", weights, np.exp(masked - shift[:, None]))
    return shift + np.log(total)

# ---------------------------------------------------------------------------
# Certainty equivalents


class _CertaintyEquivalent:
    """Order-preserving, constant-fixing generalization of conditional
    expectation under a fixed stochastic matrix."""

    constant_subadditive = False
    requires_positive = False

    def __init__(self, p):
        self.p = markov.require_stochastic_matrix(p)

    def __call__(self, v):
        raise NotImplementedError


class Expectation(_CertaintyEquivalent):
    """Plain conditional expectation ``v -> P v``."""

    constant_subadditive = True

    def __call__(self, v):
        return self.p @ np.asarray(v, dtype=float)


class Entropic(_CertaintyEquivalent):
    """Entropic risk adjustment ``(1/theta) log P exp(theta v)``.

    Negative ``theta`` penalizes dispersion in continuation values,
    positive ``theta`` rewards it.
    """

    constant_subadditive = True

    def __init__(self, theta, p):
        if theta == 0:
            raise ValueError("theta must be nonzero; use Expectation for the neutral case")
        super().__init__(p)
        self.theta = float(theta)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        # Log-space evaluation keeps exp(theta v) from overflowing.
        return _weighted_logsumexp_rows(self.theta * v, self.p) / self.theta


class KrepsPorteus(_CertaintyEquivalent):
    """Power certainty equivalent ``(P v^gamma)^(1/gamma)`` on positive v."""

    requires_positive = True

    def __init__(self, gamma, p):
        if gamma == 0:
            raise ValueError("gamma must be nonzero")
        super().__init__(p)
        self.gamma = float(gamma)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(v <= 0):
            raise ValueError("power certainty equivalent requires strictly positive values")
        log_mean = _weighted_logsumexp_rows(self.gamma * np.log(v), self.p)
        return np.exp(log_mean / self.gamma)


class QuantileCE(_CertaintyEquivalent):
    """Conditional tau-th quantile of continuation values."""

    constant_subadditive = True

    def __init__(self, tau, p):
        if not 0 <= tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        super().__init__(p)
        self.tau = float(tau)

    def __call__(self, v):
        return markov.conditional_quantile(self.tau, v, self.p)


def apply_ce(ce, v):
    """Apply a certainty-equivalent operator to a value vector."""
    return ce(v)


# ---------------------------------------------------------------------------
# Aggregators


class _Aggregator:
    """Pointwise map combining current-state rewards with an adjusted
    continuation value; increasing in the continuation argument."""

    blackwell_modulus = None

    def __call__(self, rv):
        raise NotImplementedError


class Additive(_Aggregator):
    def __init__(self, r, beta):
        self.r = np.asarray(r, dtype=float)
        self.beta = float(beta)
        if self.beta < 1:
            self.blackwell_modulus = self.beta

    def __call__(self, rv):
        return self.r + self.beta * rv


class Leontief(_Aggregator):
    def __init__(self, r, beta):
        self.r = np.asarray(r, dtype=float)
        self.beta = float(beta)
        if self.beta < 1:
            self.blackwell_modulus = self.beta

    def __call__(self, rv):
        return np.minimum(self.r, self.beta * rv)


class Uzawa(_Aggregator):
    """State-dependent discounting ``r(x) + b(x) y``."""

    def __init__(self, r, b):
        self.r = np.asarray(r, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if np.any(self.b < 0):
            raise ValueError("discount factors must be nonnegative")

    def __call__(self, rv):
        return self.r + self.b * rv


class CES(_Aggregator):
    """Constant-elasticity aggregation ``(r^alpha + beta y^alpha)^(1/alpha)``."""

    def __init__(self, r, beta, alpha):
        if alpha == 0:
            raise ValueError("alpha must be nonzero")
        self.r = np.asarray(r, dtype=float)
        if np.any(self.r <= 0):
            raise ValueError("CES aggregation requires strictly positive rewards")
        self.beta = float(beta)
        self.alpha = float(alpha)

    def __call__(self, rv):
        return (self.r**self.alpha + self.beta * rv**self.alpha) ** (1 / self.alpha)


class CESUzawa(_Aggregator):
    """CES aggregation with a state-dependent discount weight."""

    def __init__(self, r, b, alpha):
        if alpha == 0:
            raise ValueError("alpha must be nonzero")
        self.r = np.asarray(r, dtype=float)
        if np.any(self.r <= 0):
            raise ValueError("CES aggregation requires strictly positive rewards")
        self.b = np.asarray(b, dtype=float)
        self.alpha = float(alpha)

    def __call__(self, rv):
        return (self.r**self.alpha + self.b * rv**self.alpha) ** (1 / self.alpha)


# ---------------------------------------------------------------------------
# Koopmans operators


@dataclass(frozen=True)
class KoopmansOperator:
    """Composition ``K = aggregator o certainty_equivalent``.

    ``domain`` declares the value space ("reals", "positive", or an
    order interval given as a ``(lower, upper)`` tuple of vectors).
    """

    aggregator: _Aggregator
    ce: _CertaintyEquivalent
    domain: object = "reals"

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        self.check_domain(v)
        return self.aggregator(self.ce(v))

    def check_domain(self, v):
        if isinstance(self.domain, tuple):
            lo, hi = self.domain
            if np.any(v < lo - 1e-9) or np.any(v > hi + 1e-9):
                raise ValueError("value vector lies outside the declared order interval")
        elif self.domain == "positive" or self.ce.requires_positive:
            if np.any(v <= 0):
                raise ValueError("value vector must be strictly positive")


def koopmans_apply(k, v):
    """Evaluate the Koopmans operator at a value vector."""
    return k(v)


class ContractionCheck(NamedTuple):
    classification: str  # "contraction" | "unknown"
    modulus: float | None


def blackwell_contraction_check(k, rng=None, trials=20):
    """Classify a Koopmans operator as a sup-norm contraction when possible.

    Returns ``contraction(beta)`` when the aggregator shifts constants by
    at most ``beta < 1`` (additive/Leontief) and the certainty equivalent
    is constant-subadditive.  A randomized falsification pass re-checks
    ``K(v + c) <= K v + beta c`` and downgrades to "unknown" on violation.
    """
    agg, ce = k.aggregator, k.ce
    modulus = agg.blackwell_modulus
    if modulus is None or not ce.constant_subadditive:
        return ContractionCheck("unknown", None)
    rng = rng or np.random.default_rng(0)
    n = ce.p.shape[0]
    for _ in range(trials):
        v = rng.standard_normal(n)
        if ce.requires_positive:
            v = np.abs(v) + 0.1
        lam = float(rng.random() * 3)
        lhs = k(v + lam)
        rhs = k(v) + modulus * lam
        if np.any(lhs > rhs + 1e-9):
            return ContractionCheck("unknown", None)
    return ContractionCheck("contraction", modulus)


class LifetimeValueResult(NamedTuple):
    value: np.ndarray
    method: str
    iterations: int
    residual: float


def _iterate_to_fixed_point(op, v0, tol, max_iter):
    trace = fixed_point.successive_approx(
        op, v0, fixed_point.IterationConfig(tolerance=tol, max_iter=max_iter)
    )
    if not trace.converged:
        raise ConvergenceError("lifetime-value iteration hit the iteration cap", last=trace.final)
    return trace


def solve_lifetime_value(k, cfg=None, bracket=None):
    """Compute the lifetime value defined by a Koopmans operator.

    Tries stability certificates in order: Blackwell contraction,
    Epstein-Zin conjugacy (CES + power certainty equivalent), Uzawa
    linear reduction, and order-interval bracketing from a supplied
    ``bracket=(v1, v2)``.  Refuses to iterate blind: raises
    :class:`~fsdp.errors.StabilityError` when no certificate applies.
    """
    tol = cfg.tolerance if cfg else 1e-10
    max_iter = cfg.max_iter if cfg else 100_000
    agg, ce = k.aggregator, k.ce
    n = ce.p.shape[0]

    check = blackwell_contraction_check(k)
    if check.classification == "contraction":
        v0 = np.full(n, 1.0) if ce.requires_positive else np.zeros(n)
        trace = _iterate_to_fixed_point(k, v0, tol, max_iter)
        v = trace.final
        return LifetimeValueResult(v, "blackwell-contraction", trace.iterations, _residual(k, v))

    if isinstance(agg, CES) and isinstance(ce, KrepsPorteus):
        if not agg.beta < 1:
            raise StabilityError("Epstein-Zin conjugacy requires beta < 1")
        v = epstein_zin_value(agg.r**agg.alpha, agg.beta, agg.alpha, ce.gamma, ce.p, cfg)
        return LifetimeValueResult(v, "epstein-zin-conjugate", 0, _residual(k, v))

    if isinstance(agg, CESUzawa) and isinstance(ce, KrepsPorteus):
        v = ez_sdd_value(agg.r**agg.alpha, agg.b, agg.alpha, ce.gamma, ce.p, cfg)
        return LifetimeValueResult(v, "epstein-zin-sdd-conjugate", 0, _residual(k, v))

    if isinstance(agg, Uzawa) and isinstance(ce, Expectation):
        l_matrix = agg.b[:, None] * ce.p
        spectral.check_radius_below_one(l_matrix, what="discount operator b*P")
        trace = _iterate_to_fixed_point(k, np.zeros(n), tol, max_iter)
        v = trace.final
        return LifetimeValueResult(v, "uzawa-spectral", trace.iterations, _residual(k, v))

    if bracket is not None:
        v, iterations = bracketed_fixed_point(k, bracket[0], bracket[1], tol, max_iter)
        return LifetimeValueResult(v, "order-interval-bracket", iterations, _residual(k, v))

    raise StabilityError(
        "no stability certificate: operator is not Blackwell-contracting, has no "
        "conjugate or spectral reduction, and no bracket was supplied"
    )


def _residual(k, v):
    return float(np.linalg.norm(k(v) - v, np.inf))


def bracketed_fixed_point(op, lower, upper, tol=1e-10, max_iter=100_000):
    """Monotone iteration from both ends of an invariant order interval.

    For an order-preserving, globally stable self-map the two sequences
    squeeze the unique fixed point; convergence is declared when they
    meet within ``tol``.
    """
    lo = np.asarray(lower, dtype=float).copy()
    hi = np.asarray(upper, dtype=float).copy()
    if np.any(lo > hi):
        raise ValueError("bracket must satisfy lower <= upper")
    for k_iter in range(1, max_iter + 1):
        lo, hi = op(lo), op(hi)
        if np.linalg.norm(hi - lo, np.inf) <= tol:
            return 0.5 * (lo + hi), k_iter
    raise ConvergenceError("bracketed iteration hit the iteration cap", last=0.5 * (lo + hi))


# ---------------------------------------------------------------------------
# Power-transformed affine equations and Epstein-Zin values


def check_power_affine_stable(a, theta):
    """Verify ``rho(A)**(1/theta) < 1``; returns the measured radius.

    Equivalent to ``rho(A) < 1`` for positive ``theta`` and
    ``rho(A) > 1`` for negative ``theta``.
    """
    rho = spectral.spectral_radius(a)
    stable = rho < 1.0 - spectral.RADIUS_SLACK if theta > 0 else rho > 1.0 + spectral.RADIUS_SLACK
    if not stable:
        raise StabilityError(
            f"rho(A) = {rho:.12g} with exponent 1/theta = {1/theta:.6g} is not stable: "
            "no strictly positive fixed point exists"
        )
    return rho


def power_affine_solve(h, a, theta, cfg=None):
    """Fixed point of ``G v = (h + (A v)**(1/theta))**theta`` on the positive orthant.

    ``h`` must be strictly positive, ``A`` nonnegative (irreducible for
    the sharp stability characterization), ``theta`` nonzero.  Stability
    holds iff ``rho(A)**(1/theta) < 1``, which is checked up front.
    """
    h = np.asarray(h, dtype=float)
    a = spectral.require_square(a)
    if theta == 0:
        raise ValueError("theta must be nonzero")
    if np.any(h <= 0):
        raise ValueError("h must be strictly positive")
    if np.any(a < 0):
        raise ValueError("A must be nonnegative")
    check_power_affine_stable(a, theta)
    if theta == 1:
        return spectral.neumann_solve(a, h)

    def op(v):
        av = a @ v
        if np.any(av <= 0):
            raise ValueError("A v left the positive orthant; is A irreducible?")
        return (h + av ** (1 / theta)) ** theta

    # The conjugate variable can span many orders of magnitude, so the
    # stopping rule uses relative sup-norm steps.
    tol = cfg.tolerance if cfg else 1e-13
    max_iter = cfg.max_iter if cfg else 200_000
    v = h**theta
    for _ in range(max_iter):
        v_new = op(v)
        step = np.max(np.abs(v_new - v) / np.abs(v))
        v = v_new
        if step <= tol:
            return v
    raise ConvergenceError("power-affine iteration hit the iteration cap", last=v)


def epstein_zin_value(h, beta, alpha, gamma, p, cfg=None):
    """Epstein-Zin lifetime value via the power-affine conjugate.

    Solves ``v = (h + beta (P v^gamma)^(alpha/gamma))^(1/alpha)`` by
    passing ``v_hat = v^gamma`` through :func:`power_affine_solve` with
    ``theta = gamma / alpha`` and ``A = beta^theta P``, then mapping back.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if alpha == 0 or gamma == 0:
        raise ValueError("alpha and gamma must be nonzero")
    p = markov.require_stochastic_matrix(p)
    theta = gamma / alpha
    v_hat = power_affine_solve(np.asarray(h, dtype=float), beta**theta * p, theta, cfg)
    return v_hat ** (1 / gamma)


def ez_sdd_value(h, b, alpha, gamma, p, cfg=None):
    """Epstein-Zin value with state-dependent discount weights ``b``.

    Solves ``v = (h + b (P v^gamma)^(alpha/gamma))^(1/alpha)``; stability
    requires ``rho(A)**(alpha/gamma) < 1`` for ``A = diag(b^theta) P``.
    """
    if alpha == 0 or gamma == 0:
        raise ValueError("alpha and gamma must be nonzero")
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("discount weights must be strictly positive")
    p = markov.require_stochastic_matrix(p)
    theta = gamma / alpha
    a = (b**theta)[:, None] * p
    v_hat = power_affine_solve(np.asarray(h, dtype=float), a, theta, cfg)
    return v_hat ** (1 / gamma)
