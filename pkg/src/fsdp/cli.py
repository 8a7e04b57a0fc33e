"""Batch command-line front end.

Subcommands load a model (zoo name or inline matrices) from a JSON
config, run a solver or simulation, and write bit-exact tables.  Exit
codes: 0 success, 2 configuration error, 3 stability-certificate
failure (the measured spectral radius is printed), 4 convergence
failure.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import ctmdp, dp, markov, models, rdp, spectral
from .errors import ConvergenceError, SpectralRadiusError, StabilityError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CERTIFICATE = 3
EXIT_CONVERGENCE = 4

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {"type": ["string", "object"]},
        "solver": {"enum": ["vfi", "hpi", "opi", "ct_hpi"]},
        "m": {"type": "integer", "minimum": 1},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "horizon": {"type": ["integer", "number"], "minimum": 0},
        "overrides": {"type": "object"},
        "m_grid": {"type": "array", "items": {"type": "integer", "minimum": 1}},
    },
    "required": ["model"],
    "additionalProperties": True,
}

INLINE_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"enum": ["mdp"]},
        "reward": {"type": "array"},
        "kernel": {"type": "array"},
        "beta": {"type": "number"},
        "feasible": {"type": "array"},
        "discount_weights": {"type": "array"},
    },
    "required": ["type", "reward", "kernel"],
}


class ConfigError(Exception):
    pass


def _format_number(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(_format_number(obj))
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    return obj


def write_table(path, fmt, header, rows):
    """Write a table as CSV (comma, LF, UTF-8) or JSON with 17-digit floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_format_number(v) if not isinstance(v, str) else v for v in row))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    else:
        payload = [dict(zip(header, row)) for row in rows]
        path.write_text(
            json.dumps(_jsonify(payload), indent=1, sort_keys=True) + "\n",
            encoding="utf-8",
            newline="\n",
        )


def load_config(path, cli_overrides=None, seed=None):
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config failed validation: {exc.message}") from exc
    if cli_overrides:
        raw.setdefault("overrides", {}).update(cli_overrides)
    if seed is not None:
        raw["seed"] = seed
    return raw


def parse_cli_overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def build_model(config):
    """Resolve the ``model`` entry to a built zoo dictionary."""
    spec_entry = config["model"]
    overrides = config.get("overrides", {})
    if isinstance(spec_entry, str):
        card = models.ZOO.get(spec_entry)
        if card is None:
            known = ", ".join(sorted(models.ZOO))
            raise ConfigError(f"unknown model {spec_entry!r}; known models: {known}")
        try:
            built = card.build(**overrides)
        except TypeError as exc:
            raise ConfigError(f"bad override for {spec_entry!r}: {exc}") from exc
        built["name"] = spec_entry
        built["kind"] = card.kind
        return built
    try:
        jsonschema.validate(spec_entry, INLINE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"inline model failed validation: {exc.message}") from exc
    reward = np.asarray(spec_entry["reward"], dtype=float)
    kernel = np.asarray(spec_entry["kernel"], dtype=float)
    feasible = np.asarray(
        spec_entry.get("feasible", np.ones(reward.shape)), dtype=bool
    )
    kwargs = {}
    if "discount_weights" in spec_entry:
        kwargs["discount_weights"] = np.asarray(spec_entry["discount_weights"], dtype=float)
    else:
        kwargs["beta"] = spec_entry.get("beta")
    try:
        model = dp.MDPModel(feasible=feasible, reward=reward, kernel=kernel, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"inline model rejected: {exc}") from exc
    return {"mdp": model, "name": "inline", "kind": "mdp"}


def _certificate_details(built):
    model = built.get("mdp")
    if built.get("kind") == "ctmdp" or "ctmdp" in built:
        return {"kind": "continuous-time", "discount_rate": built["ctmdp"].discount_rate}
    if model is not None and model.state_dependent:
        detail = {"kind": "state-dependent"}
        if "discount_radius" in built:
            detail["exogenous_radius"] = built["discount_radius"]
        return detail
    if model is not None:
        return {"kind": "constant", "beta": model.beta, "modulus": model.beta}
    if "rdp" in built:
        return {"kind": type(built["rdp"].stability).__name__}
    return {"kind": "none"}


def run_solver(built, config):
    solver = config.get("solver", "hpi")
    tolerance = config.get("tolerance", 1e-8)
    m = config.get("m", 50)
    if "ctmdp" in built:
        if solver not in ("ct_hpi", "hpi"):
            raise ConfigError("continuous-time models solve with ct_hpi")
        return ctmdp.ct_hpi(built["ctmdp"])
    if solver == "ct_hpi":
        raise ConfigError("ct_hpi only applies to continuous-time models")
    if "mdp" in built:
        model = built["mdp"]
        dominating = "certified" if "exogenous_certificate" in built else None
        if solver == "vfi":
            return dp.solve_vfi(model, tolerance=tolerance, dominating=dominating)
        if solver == "hpi":
            return dp.solve_hpi(model, dominating=dominating)
        return dp.solve_opi(model, m=m, tolerance=tolerance, dominating=dominating)
    if "rdp" in built:
        algorithm = {"vfi": "vfi", "hpi": "hpi", "opi": "opi"}[solver]
        return rdp.rdp_solve(built["rdp"], algorithm=algorithm, m=m, tolerance=tolerance)
    raise ConfigError(f"model {built.get('name')} has no solvable component")


def model_summary(built, result):
    """Model-specific scalar diagnostics attached to solve metadata."""
    out = {}
    name = built.get("name", "")
    if name == "job_search_iid":
        h_star, w_star = models.job_search_iid_continuation(built)
        out["continuation_value"] = h_star
        out["reservation_wage"] = w_star
        out["grid_reservation_wage"] = models.job_search_iid_reservation_wage(
            built, result
        )
    elif name == "job_search_markov" and "unemployed" in built:
        out["reservation_wage"] = models.job_search_reservation_wage(built, result)
    elif name == "ct_job_search":
        out["reservation_wage"] = models.ct_reservation_wage(built, result)
    return out


def cmd_solve(args):
    config = load_config(args.config, parse_cli_overrides(args.override), args.seed)
    built = build_model(config)
    result = run_solver(built, config)
    out = Path(args.out or "fsdp_solve_output")
    fmt = args.format
    write_table(
        out / f"value.{fmt}",
        fmt,
        ["state", "value"],
        [(i, v) for i, v in enumerate(result.value)],
    )
    write_table(
        out / f"policy.{fmt}",
        fmt,
        ["state", "action"],
        [(i, int(a)) for i, a in enumerate(result.policy)],
    )
    metadata = {
        "model": built.get("name"),
        "solver": result.method,
        "iterations": result.iterations,
        "residual": result.residual,
        "error_bound": result.error_bound,
        "certificate": _certificate_details(built),
        "seed": config.get("seed"),
    }
    metadata.update(model_summary(built, result))
    (out / "metadata.json").write_text(
        json.dumps(_jsonify(metadata), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
        newline="\n",
    )
    print(f"solved {built.get('name')}: residual {result.residual:.3e} -> {out}")
    return EXIT_OK


def _simulate_mdp(built, result, config):
    model = built["mdp"]
    steps = int(config.get("horizon", 1000))
    seed = config.get("seed", 0)
    rng = np.random.default_rng(seed)
    sigma = result.policy
    n = model.n_states
    rows = dp.policy_indices(model, sigma)
    kernel = model.kernel[rows]
    kernel = np.asarray(kernel.todense()) if hasattr(kernel, "todense") else np.array(kernel)
    row_cum = np.cumsum(kernel, axis=1)
    rewards = dp.policy_reward(model, sigma)
    path = np.empty(steps + 1, dtype=np.int64)
    path[0] = 0
    draws = rng.random(max(steps, 1))
    for t in range(steps):
        path[t + 1] = min(
            int(np.searchsorted(row_cum[path[t]], draws[t], side="right")), n - 1
        )
    reward_path = rewards[path]
    series = [(t, int(s), reward_path[t]) for t, s in enumerate(path[: steps + 1])]
    occupation = np.bincount(path, minlength=n) / path.size
    stats = {
        "mean_reward": float(reward_path.mean()),
        "steps": steps,
        "seed": seed,
    }
    if np.all(reward_path > 0):
        stats["gini"] = models.gini_coefficient(reward_path)
    return series, occupation, stats


def cmd_simulate(args):
    config = load_config(args.config, parse_cli_overrides(args.override), args.seed)
    built = build_model(config)
    out = Path(args.out or "fsdp_simulate_output")
    fmt = args.format
    if "jump_spec" in built:
        spec = built["jump_spec"]
        horizon = float(config.get("horizon", 50.0))
        if horizon == 0:
            write_table(out / f"events.{fmt}", fmt, ["jump_time", "state"], [])
            print(f"empty horizon -> header-only {out}")
            return EXIT_OK
        rng = np.random.default_rng(config.get("seed", 0))
        psi0 = np.zeros(spec.rates.size)
        psi0[-1] = 1.0
        path = ctmdp.simulate_jump_chain(spec, psi0, horizon, rng)
        write_table(
            out / f"events.{fmt}",
            fmt,
            ["jump_time", "state"],
            list(zip(path.jump_times, (int(s) for s in path.states))),
        )
        print(f"simulated jump chain with {path.states.size} events -> {out}")
        return EXIT_OK
    if int(config.get("horizon", 1000)) == 0:
        write_table(out / f"series.{fmt}", fmt, ["t", "state", "reward"], [])
        print(f"empty horizon -> header-only {out}")
        return EXIT_OK
    result = run_solver(built, config)
    series, occupation, stats = _simulate_mdp(built, result, config)
    write_table(out / f"series.{fmt}", fmt, ["t", "state", "reward"], series)
    write_table(
        out / f"occupation.{fmt}",
        fmt,
        ["state", "frequency"],
        [(i, f) for i, f in enumerate(occupation)],
    )
    (out / "stats.json").write_text(
        json.dumps(_jsonify(stats), indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
        newline="\n",
    )
    print(f"simulated {stats['steps']} steps -> {out}")
    return EXIT_OK


def cmd_bench(args):
    config = load_config(args.config, parse_cli_overrides(args.override), args.seed)
    built = build_model(config)
    if "mdp" not in built:
        raise ConfigError("bench requires a discrete MDP model")
    model = built["mdp"]
    dominating = "certified" if "exogenous_certificate" in built else None
    tolerance = config.get("tolerance", 1e-6)
    m_grid = config.get("m_grid", [1, 10, 50, 100])
    rows = []
    policies = []

    def timed(fn):
        t0 = time.perf_counter()
        result = fn()
        return time.perf_counter() - t0, result

    elapsed, vfi = timed(lambda: dp.solve_vfi(model, tolerance=tolerance, dominating=dominating))
    rows.append(["vfi", "n/a", elapsed, vfi.iterations])
    policies.append(vfi.policy)
    elapsed, hpi = timed(lambda: dp.solve_hpi(model, dominating=dominating))
    rows.append(["hpi", "n/a", elapsed, hpi.iterations])
    policies.append(hpi.policy)
    for m in m_grid:
        elapsed, opi = timed(
            lambda m=m: dp.solve_opi(model, m=m, tolerance=tolerance, dominating=dominating)
        )
        rows.append([f"opi", str(m), elapsed, opi.iterations])
        policies.append(opi.policy)
    agree = all(np.array_equal(policies[0], p) for p in policies[1:])
    rows = [row + [str(agree).lower()] for row in rows]
    out = Path(args.out or "fsdp_bench_output")
    write_table(
        out / f"bench.{args.format}",
        args.format,
        ["solver", "m", "seconds", "iterations", "policies_agree"],
        rows,
    )
    print(f"benchmarked {len(rows)} solver runs (agreement: {agree}) -> {out}")
    return EXIT_OK


def cmd_spectral(args):
    try:
        raw = json.loads(Path(args.matrix).read_text(encoding="utf-8"))
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read matrix file: {exc}") from exc
    payload = raw["matrix"] if isinstance(raw, dict) else raw
    try:
        matrix = spectral.require_square(payload)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = {
        "order": matrix.shape[0],
        "spectral_radius": spectral.spectral_radius(matrix),
        "spectral_bound": spectral.spectral_bound(matrix),
    }
    if np.all(matrix >= 0):
        lower, upper = spectral.spectral_radius_bounds(matrix)
        report["radius_lower_bound"] = lower
        report["radius_upper_bound"] = upper
        pair = spectral.dominant_eigenpair(matrix)
        report["dominant_value"] = pair.value
        report["dominant_right"] = pair.right
        report["dominant_left"] = pair.left
    off = matrix.copy()
    np.fill_diagonal(off, 0.0)
    is_intensity = bool(
        np.all(off >= 0) and np.all(np.abs(matrix.sum(axis=1)) <= 1e-10)
    )
    report["is_intensity_matrix"] = is_intensity
    if is_intensity:
        report["note"] = "rows sum to zero: valid intensity matrix, spectral bound governs flows"
    out = args.out
    text = json.dumps(_jsonify(report), indent=1, sort_keys=True) + "\n"
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fsdp",
        description="Finite-state dynamic programming batch runner.",
        epilog=(
            "Exit codes: 0 success; 2 configuration error; 3 stability-"
            "certificate failure (measured spectral radius printed); "
            "4 convergence failure."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument(
            "--override",
            action="append",
            metavar="KEY=VALUE",
            help="model parameter override (repeatable)",
        )

    p_solve = sub.add_parser("solve", help="solve a model and write value/policy tables")
    common(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_sim = sub.add_parser("simulate", help="simulate under the optimal policy")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="time VFI/HPI/OPI on one model")
    common(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_spec = sub.add_parser("spectral", help="spectral report for a matrix file")
    p_spec.add_argument("matrix", help="JSON file holding a square matrix")
    p_spec.add_argument("--out", help="output file")
    p_spec.add_argument("--format", choices=["csv", "json"], default="json")
    p_spec.set_defaults(func=cmd_spectral)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpectralRadiusError, StabilityError) as exc:
        rho = getattr(exc, "spectral_radius", None)
        detail = f" (measured spectral radius {rho:.12g})" if rho is not None else ""
        print(f"stability certificate failed: {exc}{detail}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
