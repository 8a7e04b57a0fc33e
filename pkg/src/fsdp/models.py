"""Model zoo: parameterized builders for the worked examples.

Each entry packages default parameters, a builder mapping parameters to
solver-ready models, and helper routines (simulation, summary
statistics).  Defaults are fixed reference calibrations; tests may pass
overrides (for instance grid downsizing) through the card registry.
"""

import numpy as np
import scipy.sparse as sp
from scipy.stats import betabinom, binom

from . import ctmdp, dp, markov, rdp, spectral
from .errors import SpectralRadiusError

# ---------------------------------------------------------------------------
# Job search, IID offers


def job_search_iid(n=50, w_min=10.0, w_max=60.0, a=200, b=100, beta=0.96, c=10.0):
    """Job search with IID wage offers from a beta-binomial distribution.

    States stack (unemployed, offer w) then (employed, wage w); accepting
    freezes the wage.  Returns the MDP plus the pieces needed for the
    scalar continuation-value recursion.
    """
    wages = np.linspace(w_min, w_max, n + 1)
    offer_probs = betabinom(n, a, b).pmf(np.arange(n + 1))
    offer_probs = offer_probs / offer_probs.sum()
    nw = wages.size
    n_states = 2 * nw
    feasible = np.zeros((n_states, 2), dtype=bool)
    reward = np.zeros((n_states, 2))
    rows, cols, data = [], [], []

    for i, w in enumerate(wages):
        u, e = i, nw + i
        # Unemployed: reject draws a fresh offer, accept starts the job.
        feasible[u] = [True, True]
        reward[u] = [c, w]
        for j, prob in enumerate(offer_probs):
            if prob > 0:
                rows.append(u * 2 + 0)
                cols.append(j)
                data.append(prob)
        rows.append(u * 2 + 1)
        cols.append(e)
        data.append(1.0)
        # Employed: the job is permanent.
        feasible[e, 1] = True
        reward[e, 1] = w
        rows.append(e * 2 + 1)
        cols.append(e)
        data.append(1.0)

    kernel = sp.csr_matrix(
        (data, (rows, cols)), shape=(n_states * 2, n_states)
    )
    mdp_model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta)
    return {
        "mdp": mdp_model,
        "wages": wages,
        "offer_probs": offer_probs,
        "beta": beta,
        "c": c,
        "unemployed": slice(0, nw),
        "employed": slice(nw, 2 * nw),
    }


def job_search_iid_continuation(built, tolerance=1e-10, max_iter=10_000):
    """Scalar recursion for the IID continuation value.

    Iterates ``h <- c + beta * sum max(w / (1 - beta), h) phi(w)`` and
    returns ``(h_star, reservation_wage)``.
    """
    wages, phi = built["wages"], built["offer_probs"]
    beta, c = built["beta"], built["c"]
    stopping = wages / (1 - beta)
    h = 0.0
    for _ in range(max_iter):
        h_new = c + beta * float(np.maximum(stopping, h) @ phi)
        if abs(h_new - h) <= tolerance:
            h = h_new
            break
        h = h_new
    return h, (1 - beta) * h


def job_search_iid_reservation_wage(built, result):
    """Smallest offer the solved policy accepts."""
    accept = result.policy[built["unemployed"]] == 1
    return float(built["wages"][accept].min())


# ---------------------------------------------------------------------------
# Job search with Markov wages (plain / separation / risk-sensitive / quantile)


def job_search_markov(
    variant="plain",
    n=200,
    rho=0.9,
    nu=0.2,
    beta=0.98,
    c=1.0,
    alpha=0.1,
    theta=-1.0,
    tau=0.5,
):
    """Job search with persistent wage offers.

    Variants: "plain" (permanent jobs), "separation" (jobs end at rate
    ``alpha``), "risk_sensitive" (entropic continuation with parameter
    ``theta``), and "quantile" (tau-quantile continuation).  The first
    two build MDPs over (employment status, wage); the last two build
    contracting RDPs over the wage state alone.
    """
    grid, p = markov.tauchen(n, rho=rho, nu=nu)
    wages = np.exp(grid)
    if variant in ("plain", "separation"):
        sep = 0.0 if variant == "plain" else alpha
        nw = wages.size
        n_states = 2 * nw
        feasible = np.zeros((n_states, 2), dtype=bool)
        reward = np.zeros((n_states, 2))
        rows, cols, data = [], [], []
        for i, w in enumerate(wages):
            u, e = i, nw + i
            feasible[u] = [True, True]
            reward[u] = [c, w]
            for j in range(nw):
                if p[i, j] > 0:
                    rows.append(u * 2 + 0)
                    cols.append(j)
                    data.append(p[i, j])
            rows.append(u * 2 + 1)
            cols.append(e)
            data.append(1.0)
            feasible[e, 1] = True
            reward[e, 1] = w
            if sep > 0:
                for j in range(nw):
                    if p[i, j] > 0:
                        rows.append(e * 2 + 1)
                        cols.append(j)
                        data.append(sep * p[i, j])
                rows.append(e * 2 + 1)
                cols.append(e)
                data.append(1.0 - sep)
            else:
                rows.append(e * 2 + 1)
                cols.append(e)
                data.append(1.0)
        kernel = sp.csr_matrix((data, (rows, cols)), shape=(n_states * 2, n_states))
        mdp_model = dp.MDPModel(
            feasible=feasible, reward=reward, kernel=kernel, beta=beta
        )
        return {
            "kind": "mdp",
            "mdp": mdp_model,
            "wages": wages,
            "transition": p,
            "beta": beta,
            "c": c,
            "unemployed": slice(0, nw),
        }

    stopping = wages / (1 - beta)
    if variant == "risk_sensitive":
        if theta == 0:
            raise ValueError("theta must be nonzero; use the plain variant instead")

        def aggregator(v):
            shifted = theta * v
            mx = shifted.max()
            cont = c + (beta / theta) * (np.log(p @ np.exp(shifted - mx)) + mx)
            return np.column_stack([cont, stopping])

    elif variant == "quantile":

        def aggregator(v):
            cont = c + beta * markov.conditional_quantile(tau, v, p)
            return np.column_stack([cont, stopping])

    else:
        raise ValueError(f"unknown variant {variant!r}")

    model = rdp.RDPModel(
        feasible=np.ones((n, 2), dtype=bool),
        aggregator=aggregator,
        stability=rdp.Contracting(beta),
        extras={"wages": wages},
    )
    return {
        "kind": "rdp",
        "rdp": model,
        "wages": wages,
        "transition": p,
        "beta": beta,
        "c": c,
        "unemployed": slice(0, n),
    }


def job_search_reservation_wage(built, result):
    """Smallest wage at which the solved policy accepts (action 1)."""
    accept = result.policy[built["unemployed"]] == 1
    if not accept.any():
        return float("inf")
    return float(built["wages"][accept].min())


# ---------------------------------------------------------------------------
# Firm exit


def firm_exit(n=200, rho=0.95, mu=0.1, nu=0.1, beta=0.98, s=100.0):
    """Productivity-driven exit option with scrap value ``s``.

    Profit equals the productivity state; exiting pays the scrap value
    once and moves to an absorbing zero-reward state.
    """
    grid, q = markov.tauchen(n, rho=rho, nu=nu, b=mu)
    profits = grid
    n_states = n + 1  # trailing absorbing "out" state
    out = n
    feasible = np.zeros((n_states, 2), dtype=bool)
    reward = np.zeros((n_states, 2))
    rows, cols, data = [], [], []
    for i in range(n):
        feasible[i] = [True, True]
        reward[i] = [profits[i], s]
        for j in range(n):
            if q[i, j] > 0:
                rows.append(i * 2 + 0)
                cols.append(j)
                data.append(q[i, j])
        rows.append(i * 2 + 1)
        cols.append(out)
        data.append(1.0)
    feasible[out, 0] = True
    rows.append(out * 2 + 0)
    cols.append(out)
    data.append(1.0)
    kernel = sp.csr_matrix((data, (rows, cols)), shape=(n_states * 2, n_states))
    mdp_model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta)
    no_exit_value = spectral.neumann_solve(beta * q, profits)
    return {
        "mdp": mdp_model,
        "grid": grid,
        "profits": profits,
        "transition": q,
        "no_exit_value": no_exit_value,
        "scrap": s,
        "beta": beta,
        "active": slice(0, n),
    }


# ---------------------------------------------------------------------------
# American option via continuation values


def american_option(n=100, mu=10.0, rho=0.98, nu=0.2, s=0.3, r=0.01, K=10.0, T=200):
    """Finite-horizon call option embedded in an infinite-horizon problem.

    The share price is a persistent component plus a binary transient
    shock ``+-s``.  Solved on the reduced (date, persistent-state) space
    with the continuation-value operator, a contraction of modulus
    ``1/(1+r)``.
    """
    grid, q = markov.tauchen(n, rho=rho, nu=nu)
    z_vals = grid + mu
    beta = 1.0 / (1.0 + r)
    w_vals = np.array([-s, s])
    w_probs = np.array([0.5, 0.5])
    # Date index i stands for date i+1; the option is live while i < T.
    n_dates = T + 1

    def exit_reward(date_idx):
        live = 1.0 if date_idx < T else 0.0
        return live * (z_vals[None, :] + w_vals[:, None] - K)  # (w, z)

    def continuation_operator(h):
        out = np.empty_like(h)
        for i in range(n_dates):
            nxt = min(i + 1, n_dates - 1)
            payoff = exit_reward(nxt)  # (w, z)
            best = np.maximum(payoff, h[nxt][None, :])
            inner = w_probs @ best  # (z,)
            out[i] = beta * (q @ inner)
        return out

    return {
        "z_vals": z_vals,
        "transition": q,
        "w_vals": w_vals,
        "w_probs": w_probs,
        "beta": beta,
        "strike": K,
        "horizon": T,
        "exit_reward": exit_reward,
        "continuation_operator": continuation_operator,
        "n_dates": n_dates,
    }


def solve_american_option(built, tolerance=1e-10, max_iter=100_000):
    """Continuation-value fixed point ``h*(date, z)``."""
    op = built["continuation_operator"]
    h = np.zeros((built["n_dates"], built["z_vals"].size))
    for _ in range(max_iter):
        h_new = op(h)
        step = np.max(np.abs(h_new - h))
        h = h_new
        if step <= tolerance:
            return h
    raise RuntimeError("continuation-value iteration hit the cap")


def american_option_mdp(built):
    """Full-state MDP over (date, transient shock, persistent state).

    Exercising pays the exit reward and jumps to an absorbing state;
    used as a cross-check for the reduced continuation-value solution.
    """
    z_vals, q = built["z_vals"], built["transition"]
    w_vals, w_probs = built["w_vals"], built["w_probs"]
    beta, n_dates = built["beta"], built["n_dates"]
    nz, nw = z_vals.size, w_vals.size
    n_states = n_dates * nw * nz + 1
    done = n_states - 1

    def idx(i, iw, iz):
        return (i * nw + iw) * nz + iz

    feasible = np.zeros((n_states, 2), dtype=bool)
    reward = np.zeros((n_states, 2))
    rows, cols, data = [], [], []
    for i in range(n_dates):
        nxt = min(i + 1, n_dates - 1)
        payoff = built["exit_reward"](i)
        for iw in range(nw):
            for iz in range(nz):
                state = idx(i, iw, iz)
                feasible[state] = [True, True]
                reward[state, 1] = payoff[iw, iz]
                for jw in range(nw):
                    for jz in range(nz):
                        prob = w_probs[jw] * q[iz, jz]
                        if prob > 0:
                            rows.append(state * 2 + 0)
                            cols.append(idx(nxt, jw, jz))
                            data.append(prob)
                rows.append(state * 2 + 1)
                cols.append(done)
                data.append(1.0)
    feasible[done, 0] = True
    rows.append(done * 2 + 0)
    cols.append(done)
    data.append(1.0)
    kernel = sp.csr_matrix((data, (rows, cols)), shape=(n_states * 2, n_states))
    model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta)
    return model, idx


# ---------------------------------------------------------------------------
# Research & development stopping with IID costs


def rnd_model(
    pi_values=None,
    transition=None,
    beta=0.96,
    cost_values=(0.5, 1.5),
    cost_probs=(0.5, 0.5),
    n=30,
    rho=0.85,
    nu=0.3,
):
    """Stop-and-market decision with IID development costs.

    Solves the expected-value recursion ``g(x) = sum max(pi(x'),
    -c' + beta g(x')) phi(c') P(x, x')``, which lives on the persistent
    state alone.
    """
    if pi_values is None or transition is None:
        grid, transition = markov.tauchen(n, rho=rho, nu=nu)
        pi_values = np.exp(grid)
    pi_values = np.asarray(pi_values, dtype=float)
    transition = markov.require_stochastic_matrix(transition)
    cost_values = np.asarray(cost_values, dtype=float)
    cost_probs = markov.require_distribution(np.asarray(cost_probs, dtype=float))

    def ev_operator(g):
        # max over stopping vs continuing, cost integrated out.
        candidates = np.maximum(
            pi_values[None, :], -cost_values[:, None] + beta * g[None, :]
        )
        inner = cost_probs @ candidates
        return transition @ inner

    return {
        "pi": pi_values,
        "transition": transition,
        "beta": beta,
        "cost_values": cost_values,
        "cost_probs": cost_probs,
        "ev_operator": ev_operator,
    }


def solve_rnd(built, tolerance=1e-12, max_iter=100_000):
    """Fixed point of the expected-value recursion plus the stop rule."""
    op = built["ev_operator"]
    g = np.zeros(built["pi"].size)
    for _ in range(max_iter):
        g_new = op(g)
        step = np.max(np.abs(g_new - g))
        g = g_new
        if step <= tolerance:
            break
    # Stop (market the product) when the payoff beats continuing.
    policy = (
        built["pi"][None, :] >= -built["cost_values"][:, None] + built["beta"] * g[None, :]
    )
    return g, policy


# ---------------------------------------------------------------------------
# Inventory management


def _geometric_demand(p, d_max):
    demand = p * (1 - p) ** np.arange(d_max + 1)
    return demand / demand.sum()


def inventory_mdp(beta=0.98, K=40, c=0.2, kappa=2.0, p=0.6, d_max=100):
    """Inventory control with fixed ordering costs and geometric demand."""
    phi = _geometric_demand(p, d_max)
    d_vals = np.arange(d_max + 1)
    n = K + 1
    feasible = np.zeros((n, n), dtype=bool)
    reward = np.full((n, n), -np.inf)
    kernel = np.zeros((n, n, n))
    expected_sales = np.array([np.minimum(x, d_vals) @ phi for x in range(n)])
    for x in range(n):
        next_no_order = np.maximum(x - d_vals, 0)
        for a in range(n - x):
            feasible[x, a] = True
            reward[x, a] = expected_sales[x] - c * a - kappa * (a > 0)
            np.add.at(kernel[x, a], next_no_order + a, phi)
    return {
        "mdp": dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta),
        "demand_probs": phi,
        "capacity": K,
    }


def simulate_inventory(built, result, steps=10_000, seed=0):
    """Simulate stock under the solved ordering policy."""
    phi = built["demand_probs"]
    rng = np.random.default_rng(seed)
    demand = rng.choice(phi.size, size=steps, p=phi)
    path = np.empty(steps + 1, dtype=np.int64)
    orders = np.empty(steps, dtype=np.int64)
    path[0] = 0
    for t in range(steps):
        a = result.policy[path[t]]
        orders[t] = a
        path[t + 1] = max(path[t] - demand[t], 0) + a
    return path, orders


def inventory_sdd(
    rho=0.98,
    nu=0.002,
    n_z=20,
    b=0.97,
    K=40,
    c=0.2,
    kappa=0.8,
    p=0.6,
    d_max=100,
):
    """Inventory model with an exogenous discount-factor process.

    The discount factor equals the current exogenous state; stability is
    certified by ``rho(diag(z) Q) < 1`` on the exogenous block, which
    carries over to every policy because actions cannot influence the
    exogenous chain.
    """
    z_grid, q = markov.tauchen(n_z, rho=rho, nu=nu)
    z_vals = z_grid + b
    l_z = z_vals[:, None] * q
    rho_l = spectral.spectral_radius(l_z)
    if rho_l >= 1:
        raise SpectralRadiusError(
            f"discount operator radius {rho_l:.6g} >= 1", spectral_radius=rho_l
        )
    phi = _geometric_demand(p, d_max)
    d_vals = np.arange(d_max + 1)
    n_y = K + 1
    restock = np.zeros((n_y, n_y, n_y))
    reward_y = np.full((n_y, n_y), -np.inf)
    expected_sales = np.array([np.minimum(y, d_vals) @ phi for y in range(n_y)])
    for y in range(n_y):
        next_no_order = np.maximum(y - d_vals, 0)
        for a in range(n_y - y):
            reward_y[y, a] = expected_sales[y] - c * a - kappa * (a > 0)
            np.add.at(restock[y, a], next_no_order + a, phi)

    n_states = n_y * n_z
    m = n_y
    feasible = np.zeros((n_states, m), dtype=bool)
    reward = np.full((n_states, m), -np.inf)
    kernel = np.zeros((n_states * m, n_states))
    weights = np.zeros((n_states * m, n_states))
    for y in range(n_y):
        for iz in range(n_z):
            state = y * n_z + iz
            for a in range(n_y - y):
                feasible[state, a] = True
                reward[state, a] = reward_y[y, a]
                row = np.outer(restock[y, a], q[iz]).reshape(-1)
                kernel[state * m + a] = row
                weights[state * m + a] = z_vals[iz]
    model = dp.MDPModel(
        feasible=feasible, reward=reward, kernel=kernel, discount_weights=weights
    )
    return {
        "mdp": model,
        "z_vals": z_vals,
        "discount_radius": rho_l,
        "capacity": K,
        "n_z": n_z,
        "exogenous_certificate": l_z,
    }


# ---------------------------------------------------------------------------
# Optimal savings


def crra_utility(c, gamma):
    return np.log(c) if gamma == 1 else c ** (1 - gamma) / (1 - gamma)


def optimal_savings(
    R=1.01,
    beta=0.98,
    gamma=2.5,
    w_min=0.01,
    w_max=20.0,
    w_size=200,
    rho=0.9,
    nu=0.1,
    y_size=5,
):
    """Consumption-saving problem with persistent labor income.

    State (wealth, income), action next-period wealth; consumption is
    ``w + y - w'/R`` and must be positive.
    """
    w_grid = np.linspace(w_min, w_max, w_size)
    y_grid_log, q = markov.tauchen(y_size, rho=rho, nu=nu)
    y_grid = np.exp(y_grid_log)
    n = w_size * y_size
    m = w_size
    consumption = (
        w_grid[:, None, None] + y_grid[None, :, None] - w_grid[None, None, :] / R
    )
    feasible3 = consumption > 0
    reward3 = np.where(feasible3, crra_utility(np.where(feasible3, consumption, 1.0), gamma), -np.inf)
    feasible = feasible3.reshape(n, m)
    reward = reward3.reshape(n, m)

    iw, iy, k = np.nonzero(feasible3)
    base_rows = (iw * y_size + iy) * m + k
    rows = np.repeat(base_rows, y_size)
    cols = (np.repeat(k, y_size) * y_size)[:] + np.tile(np.arange(y_size), base_rows.size)
    data = q[np.repeat(iy, y_size), np.tile(np.arange(y_size), base_rows.size)]
    kernel = sp.csr_matrix((data, (rows, cols)), shape=(n * m, n))
    model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta)
    return {
        "mdp": model,
        "w_grid": w_grid,
        "y_grid": y_grid,
        "transition": q,
        "R": R,
        "shape": (w_size, y_size),
    }


def simulate_savings_wealth(built, result, steps=1_000_000, seed=0, w0_index=0):
    """Long wealth series under the optimal policy."""
    w_size, y_size = built["shape"]
    q = built["transition"]
    rng = np.random.default_rng(seed)
    row_cum = np.cumsum(q, axis=1)
    draws = rng.random(steps)
    policy = result.policy.reshape(w_size, y_size)
    wealth_idx = np.empty(steps + 1, dtype=np.int64)
    wealth_idx[0] = w0_index
    iy = 0
    w_grid = built["w_grid"]
    out = np.empty(steps + 1)
    out[0] = w_grid[w0_index]
    for t in range(steps):
        wealth_idx[t + 1] = policy[wealth_idx[t], iy]
        out[t + 1] = w_grid[wealth_idx[t + 1]]
        iy = int(np.searchsorted(row_cum[iy], draws[t], side="right"))
        iy = min(iy, y_size - 1)
    return out


def gini_coefficient(samples):
    """Gini index from the mean absolute difference of a sample."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    ranks = np.arange(1, n + 1)
    return float((2 * ranks - n - 1) @ x / (n * x.sum()))


def optimal_savings_stochastic_returns(
    beta=0.98,
    gamma=2.5,
    w_min=0.01,
    w_max=20.0,
    w_size=100,
    rho=0.9,
    nu=0.1,
    y_size=20,
    eta_min=0.75,
    eta_max=1.25,
    eta_size=2,
):
    """Savings with IID gross returns drawn each period.

    State (wealth, income, current return), action next-period wealth;
    consumption is ``w + y - w'/eta``.
    """
    w_grid = np.linspace(w_min, w_max, w_size)
    y_grid_log, q = markov.tauchen(y_size, rho=rho, nu=nu)
    y_grid = np.exp(y_grid_log)
    eta_grid = np.linspace(eta_min, eta_max, eta_size)
    eta_probs = np.full(eta_size, 1.0 / eta_size)
    n = w_size * y_size * eta_size
    m = w_size
    consumption = (
        w_grid[:, None, None, None]
        + y_grid[None, :, None, None]
        - w_grid[None, None, None, :] / eta_grid[None, None, :, None]
    )
    feasible4 = consumption > 0
    reward4 = np.where(
        feasible4, crra_utility(np.where(feasible4, consumption, 1.0), gamma), -np.inf
    )
    feasible = feasible4.reshape(n, m)
    reward = reward4.reshape(n, m)

    iw, iy, ie, k = np.nonzero(feasible4)
    base_rows = ((iw * y_size + iy) * eta_size + ie) * m + k
    n_next = y_size * eta_size
    rows = np.repeat(base_rows, n_next)
    next_iy = np.tile(np.repeat(np.arange(y_size), eta_size), base_rows.size)
    next_ie = np.tile(np.tile(np.arange(eta_size), y_size), base_rows.size)
    cols = (np.repeat(k, n_next) * y_size + next_iy) * eta_size + next_ie
    data = q[np.repeat(iy, n_next), next_iy] * eta_probs[next_ie]
    kernel = sp.csr_matrix((data, (rows, cols)), shape=(n * m, n))
    model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta)
    return {
        "mdp": model,
        "w_grid": w_grid,
        "y_grid": y_grid,
        "eta_grid": eta_grid,
        "eta_probs": eta_probs,
        "transition": q,
        "shape": (w_size, y_size, eta_size),
    }


def simulate_savings_wealth_stochastic(built, result, steps=1_000_000, seed=0):
    w_size, y_size, eta_size = built["shape"]
    q = built["transition"]
    rng = np.random.default_rng(seed)
    row_cum = np.cumsum(q, axis=1)
    y_draws = rng.random(steps)
    eta_draws = rng.integers(0, eta_size, size=steps + 1)
    policy = result.policy.reshape(w_size, y_size, eta_size)
    w_grid = built["w_grid"]
    out = np.empty(steps + 1)
    iw, iy = 0, 0
    out[0] = w_grid[iw]
    for t in range(steps):
        iw = policy[iw, iy, eta_draws[t]]
        out[t + 1] = w_grid[iw]
        iy = int(np.searchsorted(row_cum[iy], y_draws[t], side="right"))
        iy = min(iy, y_size - 1)
    return out


# ---------------------------------------------------------------------------
# Optimal investment and firm hiring


def optimal_investment(
    r=0.04,
    a0=10.0,
    a1=1.0,
    gamma=25.0,
    c=1.0,
    y_min=0.0,
    y_max=20.0,
    y_size=100,
    rho=0.9,
    nu=1.0,
    z_size=25,
):
    """Monopolist with quadratic capacity-adjustment costs."""
    beta = 1.0 / (1.0 + r)
    y_grid = np.linspace(y_min, y_max, y_size)
    z_grid, q = markov.tauchen(z_size, rho=rho, nu=nu)
    n = y_size * z_size
    m = y_size
    profit = (
        (a0 - a1 * y_grid[:, None] + z_grid[None, :] - c) * y_grid[:, None]
    )  # (y, z)
    adjustment = gamma * (y_grid[None, :] - y_grid[:, None]) ** 2  # (y, q)
    reward = (profit[:, :, None] - adjustment[:, None, :]).reshape(n, m)
    feasible = np.ones((n, m), dtype=bool)
    iy, iz, k = np.meshgrid(
        np.arange(y_size), np.arange(z_size), np.arange(m), indexing="ij"
    )
    base_rows = ((iy * z_size + iz) * m + k).reshape(-1)
    rows = np.repeat(base_rows, z_size)
    next_iz = np.tile(np.arange(z_size), base_rows.size)
    cols = np.repeat(k.reshape(-1), z_size) * z_size + next_iz
    data = q[np.repeat(iz.reshape(-1), z_size), next_iz]
    kernel = sp.csr_matrix((data, (rows, cols)), shape=(n * m, n))
    model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta)
    return {
        "mdp": model,
        "y_grid": y_grid,
        "z_grid": z_grid,
        "transition": q,
        "shape": (y_size, z_size),
        "target_output": lambda z: (a0 - c + z) / (2 * a1),
        "params": dict(a0=a0, a1=a1, gamma=gamma, c=c, rho=rho),
    }


def simulate_investment(built, result, steps=10_000, seed=0):
    """Optimal output path alongside the zero-adjustment-cost target."""
    y_size, z_size = built["shape"]
    q = built["transition"]
    rng = np.random.default_rng(seed)
    row_cum = np.cumsum(q, axis=1)
    draws = rng.random(steps)
    policy = result.policy.reshape(y_size, z_size)
    y_grid, z_grid = built["y_grid"], built["z_grid"]
    iy, iz = y_size // 2, z_size // 2
    outputs = np.empty(steps)
    targets = np.empty(steps)
    for t in range(steps):
        outputs[t] = y_grid[iy]
        targets[t] = built["target_output"](z_grid[iz])
        iy = policy[iy, iz]
        iz = int(np.searchsorted(row_cum[iz], draws[t], side="right"))
        iz = min(iz, z_size - 1)
    return outputs, targets


def firm_hiring(
    r=0.04,
    kappa=1.0,
    alpha=0.4,
    p=1.0,
    w=1.0,
    l_min=0.0,
    l_max=30.0,
    l_size=100,
    rho=0.9,
    nu=0.4,
    b=1.0,
    z_size=100,
    m_width=6.0,
):
    """Labor demand with a fixed cost of adjusting headcount."""
    beta = 1.0 / (1.0 + r)
    l_grid = np.linspace(l_min, l_max, l_size)
    z_grid, q = markov.tauchen(z_size, rho=rho, nu=nu, b=b, m=m_width)
    n = l_size * z_size
    m = l_size
    output = p * z_grid[None, :] * l_grid[:, None] ** alpha  # (l, z)
    wage_bill = w * l_grid
    adjust = kappa * (l_grid[None, :] != l_grid[:, None])  # (l, l')
    reward = (
        output[:, :, None] - wage_bill[:, None, None] - adjust[:, None, :]
    ).reshape(n, m)
    feasible = np.ones((n, m), dtype=bool)
    il, iz, k = np.meshgrid(
        np.arange(l_size), np.arange(z_size), np.arange(m), indexing="ij"
    )
    base_rows = ((il * z_size + iz) * m + k).reshape(-1)
    rows = np.repeat(base_rows, z_size)
    next_iz = np.tile(np.arange(z_size), base_rows.size)
    cols = np.repeat(k.reshape(-1), z_size) * z_size + next_iz
    data = q[np.repeat(iz.reshape(-1), z_size), next_iz]
    kernel = sp.csr_matrix((data, (rows, cols)), shape=(n * m, n))
    model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta)
    return {
        "mdp": model,
        "l_grid": l_grid,
        "z_grid": z_grid,
        "transition": q,
        "shape": (l_size, z_size),
    }


def simulate_hiring(built, result, steps=10_000, seed=0):
    l_size, z_size = built["shape"]
    q = built["transition"]
    rng = np.random.default_rng(seed)
    row_cum = np.cumsum(q, axis=1)
    draws = rng.random(steps)
    policy = result.policy.reshape(l_size, z_size)
    il, iz = 0, z_size // 2
    labor = np.empty(steps + 1, dtype=np.int64)
    labor[0] = il
    for t in range(steps):
        labor[t + 1] = policy[labor[t], iz]
        iz = int(np.searchsorted(row_cum[iz], draws[t], side="right"))
        iz = min(iz, z_size - 1)
    return built["l_grid"][labor]


# ---------------------------------------------------------------------------
# Sovereign default


def optimal_default(
    beta=0.95,
    q_price=0.96,
    reentry=0.25,
    haircut=0.9,
    crra=2.0,
    y_size=20,
    rho=0.9,
    nu=0.1,
    b_min=-0.6,
    b_max=0.4,
    b_size=20,
):
    """Sovereign borrowing with a default option and random re-entry.

    State (income, bonds, default flag); while in default the country
    consumes ``haircut * y`` and has no choices.  Defaulting resets debt
    to zero; re-entry occurs with probability ``reentry`` each period.
    Returns a contracting RDP plus the underlying MDP.
    """
    y_grid_log, q = markov.tauchen(y_size, rho=rho, nu=nu)
    y_grid = np.exp(y_grid_log)
    b_grid = np.linspace(b_min, b_max, b_size)
    zero_idx = int(np.argmin(np.abs(b_grid)))
    b_grid[zero_idx] = 0.0
    n = y_size * b_size * 2
    m = b_size + 1  # bond choices plus the default action
    default_action = b_size

    def state_index(iy, ib, d):
        return (iy * b_size + ib) * 2 + d

    feasible = np.zeros((n, m), dtype=bool)
    reward = np.full((n, m), -np.inf)
    rows, cols, data = [], [], []
    for iy in range(y_size):
        y = y_grid[iy]
        penalty_utility = crra_utility(haircut * y, crra)
        for ib in range(b_size):
            s_good = state_index(iy, ib, 0)
            s_bad = state_index(iy, ib, 1)
            # Repaying: choose next bonds, consume y + b - q b'.
            for ba in range(b_size):
                c = y + b_grid[ib] - q_price * b_grid[ba]
                if c > 0:
                    feasible[s_good, ba] = True
                    reward[s_good, ba] = crra_utility(c, crra)
                    for jy in range(y_size):
                        rows.append(s_good * m + ba)
                        cols.append(state_index(jy, ba, 0))
                        data.append(q[iy, jy])
            # Defaulting: debt wiped, consumption haircut, random re-entry.
            for s in (s_good, s_bad):
                feasible[s, default_action] = True
                reward[s, default_action] = penalty_utility
                for jy in range(y_size):
                    rows.append(s * m + default_action)
                    cols.append(state_index(jy, zero_idx, 0))
                    data.append(reentry * q[iy, jy])
                    rows.append(s * m + default_action)
                    cols.append(state_index(jy, zero_idx, 1))
                    data.append((1 - reentry) * q[iy, jy])
    kernel = sp.csr_matrix((data, (rows, cols)), shape=(n * m, n))
    mdp_model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, beta=beta)
    return {
        "mdp": mdp_model,
        "rdp": rdp.from_mdp(mdp_model),
        "y_grid": y_grid,
        "b_grid": b_grid,
        "zero_bond_index": zero_idx,
        "default_action": default_action,
        "state_index": state_index,
        "shape": (y_size, b_size),
    }


def default_region(built, result):
    """Boolean (income, bonds) table: does the solved policy default?"""
    y_size, b_size = built["shape"]
    out = np.zeros((y_size, b_size), dtype=bool)
    for iy in range(y_size):
        for ib in range(b_size):
            s = built["state_index"](iy, ib, 0)
            out[iy, ib] = result.policy[s] == built["default_action"]
    return out


# ---------------------------------------------------------------------------
# Recursive-utility savings with an IID endowment shock


def ez_savings(psi=1.97, beta=0.96, gamma=-7.89, n=80, p=0.5, e_max=0.5, w_size=50, w_max=2.0):
    """Savings under recursive utility with IID endowment shocks.

    ``psi`` is the intertemporal elasticity, ``gamma`` the risk
    parameter; the endowment has a scaled binomial distribution on
    ``n`` points.
    """
    alpha = 1.0 - 1.0 / psi
    phi = binom(n - 1, p).pmf(np.arange(n))
    phi = phi / phi.sum()
    e_grid = np.linspace(1e-5, e_max, n)
    w_grid = np.linspace(0.0, w_max, w_size)
    return {
        "alpha": alpha,
        "beta": beta,
        "gamma": gamma,
        "phi": phi,
        "e_grid": e_grid,
        "w_grid": w_grid,
    }


def ez_savings_solve_direct(built, tolerance=1e-9, max_policy_iter=200):
    """Policy iteration on the full (wealth, endowment) state space.

    Every state evaluation recomputes the risk-adjusted continuation
    from the value table (an O(|E|) reduction per call), so greedy
    sweeps do O(|W| |E|) such reductions; eliminating that redundancy
    is exactly what the endowment-averaged path is for.
    """
    alpha, beta, gamma = built["alpha"], built["beta"], built["gamma"]
    phi, e_grid, w_grid = built["phi"], built["e_grid"], built["w_grid"]
    nw, ne = w_grid.size, e_grid.size

    def greedy(v):
        sigma = np.zeros((nw, ne), dtype=np.int64)
        for iw in range(nw):
            feas = iw + 1
            for ie in range(ne):
                # Risk-adjusted continuation recomputed per state.
                cont = (np.power(v[:feas, :], gamma) @ phi) ** (1 / gamma)
                r = w_grid[iw] - w_grid[:feas] + e_grid[ie]
                values = (r**alpha + beta * cont**alpha) ** (1 / alpha)
                sigma[iw, ie] = int(values.argmax())
        return sigma

    def evaluate(sigma, v0):
        v = v0.copy()
        rows = np.arange(nw)[:, None]
        cols = np.arange(ne)[None, :]
        r_sigma = w_grid[:, None] - w_grid[sigma] + e_grid[None, :]
        for _ in range(100_000):
            # Continuation recomputed per (w, e) from the selected rows.
            inner = np.einsum("weE,E->we", np.power(v, gamma)[sigma], phi)
            v_new = (r_sigma**alpha + beta * inner ** (alpha / gamma)) ** (1 / alpha)
            step = np.max(np.abs(v_new - v) / (1.0 + np.abs(v)))
            v = v_new
            if step <= tolerance:
                return v
        raise RuntimeError("policy evaluation hit the cap")

    v = np.tile(e_grid[None, :], (nw, 1))
    sigma = np.zeros((nw, ne), dtype=np.int64)
    for _ in range(max_policy_iter):
        v = evaluate(sigma, v)
        sigma_new = greedy(v)
        if np.array_equal(sigma_new, sigma):
            return sigma, v
        sigma = sigma_new
    raise RuntimeError("policy iteration failed to settle")


def ez_savings_solve_subordinate(built, tolerance=1e-9, max_policy_iter=200):
    """Policy iteration on the endowment-averaged recursion.

    The averaged value lives on the wealth grid alone, so each policy
    evaluation iterates a vector of length ``|W|`` instead of
    ``|W| x |E|``; greedy choices remain pointwise in (wealth,
    endowment), which is what optimality requires.
    """
    alpha, beta, gamma = built["alpha"], built["beta"], built["gamma"]
    phi, e_grid, w_grid = built["phi"], built["e_grid"], built["w_grid"]
    nw, ne = w_grid.size, e_grid.size
    feas = np.tril(np.ones((nw, nw), dtype=bool))[:, :, None]  # s <= w
    # r(w, s, e) padded to one on the infeasible triangle to keep the
    # fractional powers real; those entries are masked below.
    r_table = np.where(
        feas,
        w_grid[:, None, None] - w_grid[None, :, None] + e_grid[None, None, :],
        1.0,
    )
    r_pow = r_table**alpha  # loop-invariant

    def greedy(h):
        inner = (r_pow + beta * (h[None, :, None] ** alpha)) ** (1 / alpha)
        return np.where(feas, inner, -np.inf).argmax(axis=1)  # (w, e)

    def evaluate(sigma, h0):
        h = h0.copy()
        rows = np.arange(nw)[:, None]
        r_sigma_pow = r_pow[rows, sigma, np.arange(ne)[None, :]]  # (w, e)
        for _ in range(100_000):
            inner = (r_sigma_pow + beta * h[sigma] ** alpha) ** (gamma / alpha)
            h_new = (inner @ phi) ** (1 / gamma)
            step = np.max(np.abs(h_new - h) / (1.0 + np.abs(h)))
            h = h_new
            if step <= tolerance:
                return h
        raise RuntimeError("policy evaluation hit the cap")

    h = np.full(nw, float(e_grid @ phi))
    sigma = np.zeros((nw, ne), dtype=np.int64)
    for _ in range(max_policy_iter):
        h = evaluate(sigma, h)
        sigma_new = greedy(h)
        if np.array_equal(sigma_new, sigma):
            return sigma, h
        sigma = sigma_new
    raise RuntimeError("policy iteration failed to settle")


# ---------------------------------------------------------------------------
# Lake model of employment flows


def lake_model(alpha=0.01, lam=0.1, d=0.02, b=0.025):
    """Two-pool worker-flow model with entry, exit, separation, hiring.

    Returns the linear update matrix, its growth factor, and the stable
    (unemployment, employment) shares.
    """
    matrix = np.array(
        [
            [(1 - d) * (1 - lam) + b, (1 - d) * alpha + b],
            [(1 - d) * lam, (1 - d) * (1 - alpha)],
        ]
    )
    g = b - d
    stay_employed = (1 - d) * (1 - alpha)
    u_bar = (1 + g - stay_employed) / (1 + g - stay_employed + (1 - d) * lam)
    return {
        "matrix": matrix,
        "growth_factor": 1 + g,
        "stable_shares": np.array([u_bar, 1 - u_bar]),
        "params": dict(alpha=alpha, lam=lam, d=d, b=b),
    }


# ---------------------------------------------------------------------------
# Continuous-time inventory jump chain


def ct_inventory_restock(alpha=0.7, capacity=10, rate=0.5):
    """Jump-chain inventory: geometric purchases, restock-to-capacity at zero.

    Customers arrive at rate ``rate`` and demand a geometric number of
    units; when stock runs out, the next event restores it to
    ``capacity``.
    """
    n = capacity + 1
    pi = np.zeros((n, n))
    pi[0, capacity] = 1.0
    sizes = np.arange(1, capacity + 1)
    weights = (1 - alpha) ** (sizes - 1) * alpha
    for x in range(1, n):
        for u, w in zip(sizes, weights):
            pi[x, max(x - u, 0)] += w
        pi[x] /= pi[x].sum()
    spec = ctmdp.JumpChainSpec(rates=np.full(n, rate), jump_matrix=pi)
    return {
        "jump_spec": spec,
        "intensity": ctmdp.jump_to_intensity(spec),
        "levels": np.arange(n),
    }


# ---------------------------------------------------------------------------
# Continuous-time job search


def ct_job_search(
    kappa=1.0,
    alpha=0.1,
    delta=0.1,
    c=9.0,
    n=51,
    rho=0.9,
    nu=0.2,
    wage_scale=10.0,
):
    """Continuous-time job search with separation.

    Offers arrive at rate ``kappa`` while unemployed; jobs end at rate
    ``alpha``; flows are discounted at rate ``delta``.  Wage offers
    follow a discretized log-AR(1) scaled by ``wage_scale``.
    """
    grid, p = markov.tauchen(n, rho=rho, nu=nu)
    wages = wage_scale * np.exp(grid)
    n_states = 2 * n  # unemployed block then employed block
    m = 2  # reject / accept (employed rows only use action 0)
    feasible = np.zeros((n_states, m), dtype=bool)
    reward = np.zeros((n_states, m))
    kernel = np.zeros((n_states, m, n_states))
    for i in range(n):
        u, e = i, n + i
        feasible[u] = [True, True]
        reward[u] = [c, c]
        # Rejecting keeps searching; accepting takes the next offer.
        kernel[u, 0, :n] = kappa * p[i]
        kernel[u, 0, u] -= kappa
        kernel[u, 1, n : 2 * n] = kappa * p[i]
        kernel[u, 1, u] -= kappa
        feasible[e, 0] = True
        reward[e, 0] = wages[i]
        kernel[e, 0, :n] = alpha * p[i]
        kernel[e, 0, e] -= alpha
    model = ctmdp.CTMDPModel(
        feasible=feasible, discount_rate=delta, reward=reward, kernel=kernel
    )
    return {
        "ctmdp": model,
        "wages": wages,
        "transition": p,
        "unemployed": slice(0, n),
        "params": dict(kappa=kappa, alpha=alpha, delta=delta, c=c),
    }


def ct_reservation_wage(built, result=None):
    """Smallest wage whose offer the solved policy accepts."""
    if result is None:
        result = ctmdp.ct_hpi(built["ctmdp"])
    accept = result.policy[built["unemployed"]] == 1
    if not accept.any():
        return float("inf")
    return float(built["wages"][accept].min())


# ---------------------------------------------------------------------------
# Registry


class ModelCard:
    """Named zoo entry: builder, literal defaults, and test-scale overrides."""

    def __init__(self, name, builder, defaults=None, ci_overrides=None, kind="mdp"):
        self.name = name
        self.builder = builder
        self.defaults = defaults or {}
        self.ci_overrides = ci_overrides or {}
        self.kind = kind

    def build(self, ci_scale=False, **overrides):
        params = dict(self.defaults)
        if ci_scale:
            params.update(self.ci_overrides)
        params.update(overrides)
        return self.builder(**params)


ZOO = {
    card.name: card
    for card in [
        ModelCard("job_search_iid", job_search_iid),
        ModelCard(
            "job_search_markov",
            job_search_markov,
            ci_overrides=dict(n=60),
        ),
        ModelCard("firm_exit", firm_exit, ci_overrides=dict(n=60)),
        ModelCard(
            "inventory_mdp", inventory_mdp, ci_overrides=dict(K=25, d_max=60)
        ),
        ModelCard(
            "inventory_sdd",
            inventory_sdd,
            ci_overrides=dict(K=20, n_z=10, d_max=60),
        ),
        ModelCard(
            "optimal_savings",
            optimal_savings,
            ci_overrides=dict(w_size=60, y_size=4),
        ),
        ModelCard(
            "optimal_savings_stochastic_returns",
            optimal_savings_stochastic_returns,
            ci_overrides=dict(w_size=40, y_size=6),
        ),
        ModelCard(
            "optimal_investment",
            optimal_investment,
            ci_overrides=dict(y_size=40, z_size=15),
        ),
        ModelCard(
            "firm_hiring",
            firm_hiring,
            ci_overrides=dict(l_size=40, z_size=15),
        ),
        ModelCard(
            "optimal_default",
            optimal_default,
            ci_overrides=dict(y_size=10, b_size=10),
            kind="rdp",
        ),
        ModelCard("lake_model", lake_model, kind="linear"),
        ModelCard("ct_inventory_restock", ct_inventory_restock, kind="jump"),
        ModelCard("ct_job_search", ct_job_search, ci_overrides=dict(n=25), kind="ctmdp"),
    ]
}
