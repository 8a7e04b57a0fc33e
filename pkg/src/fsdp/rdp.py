"""Recursive decision processes: abstract aggregators with declared stability.

An RDP replaces the MDP's reward/discount/kernel triple by a monotone
value aggregator evaluated per state-action pair.  Each model declares
the stability class that certifies its policy operators (sup-norm
contraction, spectral domination, an invariant order interval, or a
user-supplied evaluator), and the solvers refuse to iterate without a
certificate.  Includes constructors for robust (worst-case kernel),
smooth-ambiguity, shortest-path, and negative-discount-rate models.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import dp, spectral
from .dp import SolveResult
from .errors import ConvergenceError, SpectralRadiusError, StabilityError


@dataclass(frozen=True)
class Contracting:
    """Every policy operator contracts in the sup norm with this modulus."""

    modulus: float


@dataclass(frozen=True)
class EventuallyContracting:
    """Policy operators are dominated by a linear map with radius below one.

    ``dominating`` is an ``(n, n)`` matrix bounding ``|B(x,a,v) -
    B(x,a,w)| <= sum_x' |v - w| L(x, x')``; with ``None``, per-policy
    radii are enumerated when the policy space is small (the caller must
    then supply ``policy_radius``, a map from policies to matrices).
    """

    dominating: object = None
    policy_radius: object = None


@dataclass(frozen=True)
class ConvexConcave:
    """Globally stable on the order interval ``[lower, upper]``.

    ``orientation`` records whether stability comes through convexity or
    concavity of the aggregator; evaluation squeezes fixed points
    between monotone iterations started from both ends.
    """

    lower: np.ndarray
    upper: np.ndarray
    orientation: str = "concave"


@dataclass(frozen=True)
class UserCertified:
    """Caller-supplied exact policy evaluator ``(model, sigma) -> v_sigma``."""

    evaluator: object


@dataclass
class RDPModel:
    """Feasibility mask plus a value aggregator and its stability class.

    ``aggregator`` is a callable; vectorized form maps a value vector to
    the full ``(n, m)`` table of aggregator values (entries at
    infeasible pairs are ignored), scalar form has signature
    ``B(x, a, v)``.
    """

    feasible: np.ndarray
    aggregator: object
    stability: object
    vectorized: bool = True
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.feasible = np.asarray(self.feasible, dtype=bool)
        if self.feasible.ndim != 2 or not self.feasible.any(axis=1).all():
            raise ValueError("feasibility mask needs at least one action per state")

    @property
    def n_states(self):
        return self.feasible.shape[0]

    @property
    def n_actions(self):
        return self.feasible.shape[1]

    def aggregate(self, v):
        """Aggregator values at every state-action pair, shaped (n, m)."""
        v = np.asarray(v, dtype=float)
        if self.vectorized:
            return np.asarray(self.aggregator(v), dtype=float)
        n, m = self.feasible.shape
        out = np.empty((n, m))
        for x in range(n):
            for a in range(m):
                out[x, a] = self.aggregator(x, a, v) if self.feasible[x, a] else np.nan
        return out

    def policy_count(self):
        return float(np.sum(np.log10(self.feasible.sum(axis=1))))


def rdp_bellman(model, v, mode="max"):
    fill = -np.inf if mode == "max" else np.inf
    table = np.where(model.feasible, model.aggregate(v), fill)
    return table.max(axis=1) if mode == "max" else table.min(axis=1)


def rdp_greedy(model, v, mode="max"):
    fill = -np.inf if mode == "max" else np.inf
    table = np.where(model.feasible, model.aggregate(v), fill)
    return table.argmax(axis=1) if mode == "max" else table.argmin(axis=1)


def rdp_policy_apply(model, sigma, v):
    sigma = np.asarray(sigma, dtype=np.int64)
    return model.aggregate(v)[np.arange(model.n_states), sigma]


def check_monotone_aggregator(model, rng=None, trials=10, scale=1.0, base=None):
    """Spot-test that the aggregator is monotone in continuation values."""
    rng = rng or np.random.default_rng(0)
    n = model.n_states
    for _ in range(trials):
        v = base + scale * rng.random(n) if base is not None else rng.standard_normal(n)
        w = v + scale * rng.random(n)
        bv, bw = model.aggregate(v), model.aggregate(w)
        mask = model.feasible
        if np.any(bv[mask] > bw[mask] + 1e-9):
            raise ValueError("aggregator is not monotone in the value argument")


def verify_certificate(model, mode="max"):
    """Validate the declared stability class before solving."""
    stab = model.stability
    if isinstance(stab, Contracting):
        if not 0 <= stab.modulus < 1:
            raise StabilityError(f"contraction modulus {stab.modulus} is not below one")
    elif isinstance(stab, EventuallyContracting):
        if stab.dominating is not None:
            rho = spectral.spectral_radius(np.asarray(stab.dominating, dtype=float))
            if rho >= 1.0 - spectral.RADIUS_SLACK:
                raise SpectralRadiusError(
                    f"dominating operator has spectral radius {rho:.12g} >= 1",
                    spectral_radius=rho,
                )
        else:
            if stab.policy_radius is None:
                raise StabilityError(
                    "eventually-contracting class needs a dominating matrix or a "
                    "per-policy radius map"
                )
            if model.policy_count() > math.log10(dp.POLICY_ENUMERATION_LIMIT):
                raise StabilityError(
                    "policy space too large for exhaustive per-policy radius checks"
                )
            for sigma in dp.enumerate_policies(model):
                l_sigma = np.asarray(stab.policy_radius(sigma), dtype=float)
                rho = spectral.spectral_radius(l_sigma)
                if rho >= 1.0 - spectral.RADIUS_SLACK:
                    raise SpectralRadiusError(
                        f"policy has discount-operator radius {rho:.12g} >= 1",
                        spectral_radius=rho,
                        policy=sigma,
                    )
    elif isinstance(stab, ConvexConcave):
        lower = np.asarray(stab.lower, dtype=float)
        upper = np.asarray(stab.upper, dtype=float)
        if np.any(lower > upper):
            raise StabilityError("order interval is empty")
        mask = model.feasible
        b_lower = model.aggregate(lower)[mask]
        b_upper = model.aggregate(upper)[mask]
        if np.any(b_lower < lower.repeat(model.n_actions).reshape(mask.shape)[mask] - 1e-9):
            raise StabilityError("aggregator maps the lower bracket below itself")
        if np.any(b_upper > upper.repeat(model.n_actions).reshape(mask.shape)[mask] + 1e-9):
            raise StabilityError("aggregator maps the upper bracket above itself")
    elif isinstance(stab, UserCertified):
        if not callable(stab.evaluator):
            raise StabilityError("user-certified class needs a callable evaluator")
    else:
        raise StabilityError(f"unknown stability class {type(stab).__name__}")


def rdp_policy_value(model, sigma, tolerance=1e-10, max_iter=200_000):
    """Fixed point of the policy operator, computed per stability class.

    Contracting and eventually-contracting classes iterate (the latter
    is certified by the dominating operator); interval classes squeeze
    the fixed point between iterations from both ends of the bracket.
    """
    sigma = np.asarray(sigma, dtype=np.int64)
    stab = model.stability
    if isinstance(stab, UserCertified):
        return np.asarray(stab.evaluator(model, sigma), dtype=float)
    if isinstance(stab, ConvexConcave):
        lo = np.asarray(stab.lower, dtype=float).copy()
        hi = np.asarray(stab.upper, dtype=float).copy()
        for _ in range(max_iter):
            lo = rdp_policy_apply(model, sigma, lo)
            hi = rdp_policy_apply(model, sigma, hi)
            scale = 1.0 + np.max(np.abs(hi))
            if np.max(np.abs(hi - lo)) <= tolerance * scale:
                return 0.5 * (lo + hi)
        raise ConvergenceError("bracketed policy evaluation hit the cap", last=hi)
    v = np.zeros(model.n_states)
    eps = np.finfo(float).eps
    for _ in range(max_iter):
        v_new = rdp_policy_apply(model, sigma, v)
        if not np.all(np.isfinite(v_new)):
            raise ConvergenceError("policy evaluation diverged", last=v)
        step = np.max(np.abs(v_new - v))
        v = v_new
        if isinstance(stab, Contracting):
            # A step below tol * (1 - modulus) pins the fixed point to tol;
            # the floor guards against stalling at rounding noise.
            threshold = max(
                tolerance * (1.0 - stab.modulus), 64 * eps * (1.0 + np.max(np.abs(v)))
            )
        else:
            threshold = tolerance * (1.0 + np.max(np.abs(v)))
        if step <= threshold:
            return v
    raise ConvergenceError("policy evaluation hit the iteration cap", last=v)


def _default_policy(model, mode):
    # Myopic start: best action against the zero (or bracket-lower) value.
    stab = model.stability
    start = (
        np.asarray(stab.lower, dtype=float)
        if isinstance(stab, ConvexConcave)
        else np.zeros(model.n_states)
    )
    return rdp_greedy(model, start, mode)


def rdp_solve(
    model,
    mode="max",
    algorithm="hpi",
    sigma0=None,
    m=50,
    tolerance=1e-10,
    max_iter=100_000,
):
    """Solve an RDP by HPI, VFI, or OPI after verifying its certificate.

    Returns a :class:`~fsdp.dp.SolveResult`; the residual reported is the
    sup-norm Bellman residual of the returned value function.
    """
    verify_certificate(model, mode)
    if algorithm == "hpi":
        return _rdp_hpi(model, mode, sigma0, tolerance)
    if algorithm == "vfi":
        return _rdp_vfi(model, mode, tolerance, max_iter)
    if algorithm == "opi":
        return _rdp_opi(model, mode, sigma0, m, tolerance, max_iter)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _rdp_finish(model, v, mode, iterations, method):
    sigma = rdp_greedy(model, v, mode)
    residual = float(np.max(np.abs(rdp_bellman(model, v, mode) - v)))
    return SolveResult(
        value=v, policy=sigma, iterations=iterations, method=method, residual=residual
    )


def _rdp_hpi(model, mode, sigma0, tolerance, cap=10_000):
    sigma = (
        _default_policy(model, mode) if sigma0 is None else np.asarray(sigma0, dtype=np.int64)
    )
    v = rdp_policy_value(model, sigma, tolerance)
    for k in range(1, cap + 1):
        sigma_new = rdp_greedy(model, v, mode)
        v_new = rdp_policy_value(model, sigma_new, tolerance)
        if np.array_equal(sigma_new, sigma) or np.max(np.abs(v_new - v)) <= 1e-12:
            return _rdp_finish(model, v_new, mode, k, "rdp-hpi")
        sigma, v = sigma_new, v_new
    raise ConvergenceError("policy iteration cycled past the defensive cap", last=v)


def _rdp_vfi(model, mode, tolerance, max_iter):
    stab = model.stability
    v = (
        np.asarray(stab.lower, dtype=float).copy()
        if isinstance(stab, ConvexConcave)
        else np.zeros(model.n_states)
    )
    for k in range(1, max_iter + 1):
        v_new = rdp_bellman(model, v, mode)
        step = np.max(np.abs(v_new - v))
        v = v_new
        if step <= tolerance:
            return _rdp_finish(model, v, mode, k, "rdp-vfi")
    raise ConvergenceError("value iteration hit the iteration cap", last=v)


def _rdp_opi(model, mode, sigma0, m, tolerance, max_iter):
    sigma = (
        _default_policy(model, mode) if sigma0 is None else np.asarray(sigma0, dtype=np.int64)
    )
    v = rdp_policy_value(model, sigma, tolerance)
    for k in range(1, max_iter + 1):
        sigma = rdp_greedy(model, v, mode)
        v_new = v
        for _ in range(m):
            v_new = rdp_policy_apply(model, sigma, v_new)
        step = np.max(np.abs(v_new - v))
        v = v_new
        if step <= tolerance:
            return _rdp_finish(model, v, mode, k, f"rdp-opi(m={m})")
    raise ConvergenceError("optimistic iteration hit the iteration cap", last=v)


# ---------------------------------------------------------------------------
# Constructors


def from_mdp(mdp_model):
    """Wrap an MDP as an RDP with the same Bellman equation."""
    if mdp_model.state_dependent:
        raise ValueError("wrap constant-discount models only")

    def aggregator(v):
        return dp.q_factors(mdp_model, v)

    return RDPModel(
        feasible=mdp_model.feasible,
        aggregator=aggregator,
        stability=Contracting(mdp_model.beta),
        extras={"mdp": mdp_model},
    )


def make_robust_aggregator(reward, beta, kernels, penalty=None, slack=1.0):
    """Worst-case-kernel RDP: the adversary picks the least favorable law.

    ``kernels`` is a finite family of transition kernels (each
    ``(n, m, n)`` or flat); ``penalty`` optionally adds a per-kernel
    ``(n, m)`` compensation to the reward.  The model is concave over
    the order interval ``[(r_min - slack) / (1 - beta), r_max / (1 - beta)]``
    and solvable by any of the RDP algorithms.
    """
    reward = np.asarray(reward, dtype=float)
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if len(kernels) == 0:
        raise ValueError("kernel family must be nonempty")
    n, m = reward.shape
    flats = [dp._flatten_kernel(k, n, m) for k in kernels]
    if penalty is None:
        penalties = [np.zeros((n, m)) for _ in flats]
    else:
        penalties = [np.asarray(pen, dtype=float) for pen in penalty]
        if len(penalties) != len(flats):
            raise ValueError("one penalty per kernel")
    feasible = np.ones((n, m), dtype=bool)

    def aggregator(v):
        v = np.asarray(v, dtype=float)
        best = None
        for flat, pen in zip(flats, penalties):
            ev = np.asarray(flat @ v).reshape(n, m)
            candidate = reward + pen + beta * ev
            best = candidate if best is None else np.minimum(best, candidate)
        return best

    effective = [reward + pen for pen in penalties]
    r_min = min(float(np.min(e)) for e in effective)
    r_max = max(float(np.max(e)) for e in effective)
    lower = np.full(n, (r_min - slack) / (1 - beta))
    upper = np.full(n, r_max / (1 - beta))
    return RDPModel(
        feasible=feasible,
        aggregator=aggregator,
        stability=ConvexConcave(lower, upper, "concave"),
        extras={"kernels": flats, "penalties": penalties, "beta": beta},
    )


def make_smooth_ambiguity_aggregator(reward, beta, kernels, mu, alpha, kappa, gamma, slack=1.0):
    """Recursive smooth-ambiguity RDP with belief weights over kernels.

    ``mu`` holds per-state weights over the kernel family.  Parameters
    must satisfy ``kappa < gamma < 0 < alpha < 1`` (risk aversion
    ``gamma``, ambiguity aversion ``kappa``, intertemporal curvature
    ``alpha``).  Globally stable on
    ``[(r_min/(1-beta))^(1/alpha), ((r_max+slack)/(1-beta))^(1/alpha)]``.
    """
    reward = np.asarray(reward, dtype=float)
    if not (kappa < gamma < 0 < alpha < 1):
        raise ValueError("parameters must satisfy kappa < gamma < 0 < alpha < 1")
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if np.any(reward <= 0):
        raise ValueError("rewards must be strictly positive")
    n, m = reward.shape
    flats = [dp._flatten_kernel(k, n, m) for k in kernels]
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (n, len(flats)):
        raise ValueError("mu must hold one weight per state and kernel")
    if np.any(mu < 0) or np.any(np.abs(mu.sum(axis=1) - 1.0) > 1e-10):
        raise ValueError("mu rows must be distributions over the kernel family")
    feasible = np.ones((n, m), dtype=bool)

    def aggregator(v):
        v = np.asarray(v, dtype=float)
        if np.any(v <= 0):
            raise ValueError("values must be strictly positive")
        inner = np.stack(
            [np.asarray(flat @ v**gamma).reshape(n, m) for flat in flats], axis=-1
        )
        mixed = np.einsum("xak,xk->xa", inner ** (kappa / gamma), mu)
        return (reward + beta * mixed ** (alpha / kappa)) ** (1 / alpha)

    r_min, r_max = float(np.min(reward)), float(np.max(reward))
    lower = np.full(n, (r_min / (1 - beta)) ** (1 / alpha))
    upper = np.full(n, ((r_max + slack) / (1 - beta)) ** (1 / alpha))
    return RDPModel(
        feasible=feasible,
        aggregator=aggregator,
        stability=ConvexConcave(lower, upper, "concave-after-conjugation"),
        extras={
            "kernels": flats,
            "mu": mu,
            "reward": reward,
            "beta": beta,
            "alpha": alpha,
            "kappa": kappa,
            "gamma": gamma,
            "bracket": (lower, upper),
        },
    )


def smooth_ambiguity_policy_value_conjugate(model, sigma, tolerance=1e-12, max_iter=200_000):
    """Policy value of a smooth-ambiguity model via its conjugate form.

    Transforms values by ``v -> v^kappa`` (an order-reversing bijection
    on the bracket), iterates the resulting concave operator from both
    ends of the transformed interval, and maps the limit back.
    """
    ex = model.extras
    kernels, mu = ex["kernels"], ex["mu"]
    reward, beta = ex["reward"], ex["beta"]
    alpha, kappa, gamma = ex["alpha"], ex["kappa"], ex["gamma"]
    xi, zeta = gamma / kappa, kappa / alpha
    n, m = reward.shape
    sigma = np.asarray(sigma, dtype=np.int64)
    rows = np.arange(n)
    r_sigma = reward[rows, sigma]

    def conjugate_apply(v_hat):
        inner = np.stack(
            [np.asarray(flat @ v_hat**xi).reshape(n, m)[rows, sigma] for flat in kernels],
            axis=-1,
        )
        mixed = np.einsum("xk,xk->x", inner ** (1 / xi), mu)
        return (r_sigma + beta * mixed ** (1 / zeta)) ** zeta

    lower, upper = ex["bracket"]
    # kappa < 0 reverses the interval under t -> t^kappa.
    lo = upper**kappa
    hi = lower**kappa
    for _ in range(max_iter):
        lo, hi = conjugate_apply(lo), conjugate_apply(hi)
        if np.max(np.abs(hi - lo) / np.abs(hi)) <= tolerance:
            return (0.5 * (lo + hi)) ** (1 / kappa)
    raise ConvergenceError("conjugate policy evaluation hit the cap", last=hi)


# ---------------------------------------------------------------------------
# Shortest paths and negative discount rates


def _successor_table(cost_matrix):
    cost_matrix = np.asarray(cost_matrix, dtype=float)
    n = cost_matrix.shape[0]
    successors = [np.flatnonzero(np.isfinite(cost_matrix[x])) for x in range(n)]
    if any(s.size == 0 for s in successors):
        raise ValueError("every node needs at least one outgoing edge")
    m = max(s.size for s in successors)
    table = np.zeros((n, m), dtype=np.int64)
    mask = np.zeros((n, m), dtype=bool)
    for x, succ in enumerate(successors):
        table[x, : succ.size] = succ
        mask[x, : succ.size] = True
    return table, mask


def _max_cost_to_go(cost_matrix, table, mask, beta, dest):
    n = cost_matrix.shape[0]
    worst = np.zeros(n)
    edge_cost = np.where(mask, cost_matrix[np.arange(n)[:, None], table], -np.inf)
    for _ in range(n + 1):
        candidate = edge_cost + beta * worst[table]
        worst = np.where(mask, candidate, -np.inf).max(axis=1)
        worst[dest] = 0.0
    if not np.all(np.isfinite(worst)):
        raise ValueError("maximum path cost is unbounded; graph has an off-destination cycle")
    return worst


def path_cost_model(cost_matrix, dest, beta=1.0):
    """Min-cost path RDP on a directed graph with a destination self-loop.

    ``cost_matrix[x, x']`` is the edge cost (``inf`` for absent edges);
    the destination must carry a zero-cost self-loop and be reachable
    from every node, costs are strictly positive off the destination,
    and ``beta >= 1`` scales continuation costs (``beta > 1`` models a
    negative rate of time preference).
    """
    cost_matrix = np.asarray(cost_matrix, dtype=float)
    n = cost_matrix.shape[0]
    if beta < 1:
        raise ValueError("beta must be >= 1; use an MDP for discounted problems")
    if not np.isfinite(cost_matrix[dest, dest]) or cost_matrix[dest, dest] != 0:
        raise ValueError("destination needs a zero-cost self-loop")
    finite = np.isfinite(cost_matrix)
    offdest = finite.copy()
    offdest[dest, dest] = False
    if np.any(cost_matrix[offdest] <= 0):
        raise ValueError("zero or negative edge cost off the destination")
    # Reachability of the destination through the reverse graph.
    reach = np.zeros(n, dtype=bool)
    reach[dest] = True
    frontier = [dest]
    while frontier:
        nxt = finite[:, frontier].any(axis=1) & ~reach
        frontier = np.flatnonzero(nxt).tolist()
        reach |= nxt
    if not reach.all():
        raise ValueError("destination unreachable from some nodes")

    table, mask = _successor_table(cost_matrix)
    worst = _max_cost_to_go(cost_matrix, table, mask, beta, dest)
    edge_cost = cost_matrix[np.arange(n)[:, None], table]

    def aggregator(v):
        v = np.asarray(v, dtype=float)
        return edge_cost + beta * v[table]

    model = RDPModel(
        feasible=mask,
        aggregator=aggregator,
        stability=ConvexConcave(np.zeros(n), worst, "concave"),
        extras={"successors": table, "dest": dest, "beta": beta, "max_cost": worst},
    )
    return model


def solve_path_costs(cost_matrix, dest, beta=1.0, algorithm="hpi"):
    """Minimum cost-to-go and min-greedy successor map for a cost graph.

    Returns a :class:`~fsdp.dp.SolveResult` whose policy holds successor
    node indices (not action slots).
    """
    model = path_cost_model(cost_matrix, dest, beta)
    result = rdp_solve(model, mode="min", algorithm=algorithm)
    table = model.extras["successors"]
    successor = table[np.arange(model.n_states), result.policy]
    result.policy = successor
    return result


def negative_discount_solve(cost_matrix, beta, dest, algorithm="hpi"):
    """Min-cost traversal with a negative rate of time preference (beta > 1)."""
    if beta <= 1:
        raise ValueError("negative-discount problems need beta > 1")
    return solve_path_costs(cost_matrix, dest, beta, algorithm)
