"""Command-line front end: ``sim benchmark|estimate|design|mpc --config <path> --out <dir>``.

Configurations are JSON.  Every command writes CSV files (UTF-8, ``\\n`` line
endings, floats with 15 significant digits) and a ``summary.json`` into the
output directory.  Apart from the ``wall_time_s`` column of the benchmark,
outputs are byte-identical across runs with the same seed.

Exit codes: 0 success, 1 I/O or configuration error, 2 optimization
failure, 3 simulation divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import control
from .estimate import (
    ReferenceTrajectory,
    design_arm,
    end_effector_positions,
    estimate_parameters,
    format_float,
)
from .integrate import METHODS, IntegrationError, IntegratorConfig
from .model import (
    DHParams,
    ModelError,
    ParameterBinding,
    Selector,
    apply_parameters,
    cartpole,
    cartpole_binding,
    load_model,
    pendulum_chain,
    pendulum_length_binding,
)
from .optimize import OptimizerConfig
from .sensitivity import ENGINES, GradientRequest, LossTarget
from .system import ParametricSystem

EXIT_OK, EXIT_CONFIG, EXIT_OPTIMIZER, EXIT_DIVERGED = 0, 1, 2, 3
METHOD_ORDER = ("fd", "reverse_ad", "coupled", "adjoint")


class ConfigError(Exception):
    """Invalid or unreadable configuration (exit code 1)."""


class OptimizerFailure(Exception):
    """The optimizer stopped without reaching its tolerance (exit code 2)."""


# ---------------------------------------------------------------- CSV / JSON

def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def read_csv(path) -> tuple[list, list]:
    """``(header, rows)`` with numeric cells converted to float."""
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"{path}: empty CSV")

    def conv(v):
        try:
            return float(v)
        except ValueError:
            return v

    return rows[0], [[conv(v) for v in r] for r in rows[1:] if r]


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(format_float(v)) if math.isfinite(v) else str(v)
    return v


def write_summary(out: Path, summary: dict) -> None:
    text = json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"
    (out / "summary.json").write_bytes(text.encode("utf-8"))


# ------------------------------------------------------------ config access

def load_config(path) -> dict:
    p = Path(path)
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {p}: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg["_dir"] = str(p.resolve().parent)
    return cfg


def _get(cfg, key, kind=None, default=...):
    if key not in cfg:
        if default is ...:
            raise ConfigError(f"missing config key {key!r}")
        return default
    v = cfg[key]
    if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind in (int, float, (int, float)):
        raise ConfigError(f"config key {key!r} has the wrong type")
    return v


def _seed(cfg, override) -> int:
    if override is not None:
        return int(override)
    if "seed" not in cfg:
        raise ConfigError("config needs a 'seed'")
    s = cfg["seed"]
    if not isinstance(s, int) or isinstance(s, bool) or s < 0:
        raise ConfigError("'seed' must be a non-negative integer")
    return s


def _path(cfg, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg["_dir"]) / p


def _integrator(spec: dict | None, default_dt=0.01) -> IntegratorConfig:
    spec = spec or {}
    try:
        return IntegratorConfig(
            method=spec.get("method", "rk4"),
            dt=float(spec.get("dt", default_dt)),
            abs_tol=float(spec.get("abs_tol", 1e-6)),
            rel_tol=float(spec.get("rel_tol", 1e-6)),
            max_step=float(spec.get("max_step", math.inf)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"integrator: {e}") from None


def _optimizer(spec: dict | None, **defaults) -> OptimizerConfig:
    spec = dict(defaults, **(spec or {}))
    allowed = {"memory", "max_iters", "grad_tol", "f_tol", "c1", "c2", "lower", "upper", "max_line_search"}
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"optimizer: unknown keys {sorted(unknown)}")
    for k in ("lower", "upper"):
        if spec.get(k) is not None:
            spec[k] = tuple(float(v) for v in spec[k])
    try:
        return OptimizerConfig(**spec)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"optimizer: {e}") from None


def _model(cfg, spec):
    """A model from a JSON file path or a ``{"preset": ...}`` description."""
    if isinstance(spec, str):
        try:
            return load_model(_path(cfg, spec))
        except FileNotFoundError:
            raise ConfigError(f"model file not found: {spec}") from None
        except (OSError, ModelError) as e:
            raise ConfigError(f"model {spec}: {e}") from None
    if not isinstance(spec, dict) or "preset" not in spec:
        raise ConfigError("model must be a file path or an object with a 'preset'")
    args = {k: v for k, v in spec.items() if k != "preset"}
    try:
        if spec["preset"] == "pendulum_chain":
            return pendulum_chain(**args)
        if spec["preset"] == "cartpole":
            return cartpole(**args)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"model preset: {e}") from None
    raise ConfigError(f"unknown model preset {spec['preset']!r}")


def _binding(spec) -> ParameterBinding:
    if isinstance(spec, dict):
        args = {k: v for k, v in spec.items() if k != "preset"}
        try:
            if spec.get("preset") == "pendulum_length":
                return pendulum_length_binding(**args)
            if spec.get("preset") == "cartpole":
                return cartpole_binding(**args)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"binding preset: {e}") from None
        raise ConfigError(f"unknown binding preset {spec.get('preset')!r}")
    if not isinstance(spec, list):
        raise ConfigError("binding must be a preset object or a list of entries")
    try:
        return ParameterBinding.of(*[
            (Selector(e["kind"], int(e["target"]), int(e.get("component", 0))), int(e["index"]),
             float(e.get("scale", 1.0)), int(e.get("power", 1)))
            for e in spec])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"binding entry: {e}") from None


def _vector(v, n, name) -> np.ndarray:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return np.full(n, float(v))
    a = np.asarray(v, dtype=float)
    if a.shape != (n,):
        raise ConfigError(f"{name} needs {n} entries")
    return a


# ------------------------------------------------------------------ benchmark

def _benchmark_cell(method, n, dt, cfg, seed, rep):
    """One gradient computation on the ``n``-link pendulum; returns a CSV row."""
    rng = np.random.default_rng([seed, n, rep])
    length = float(cfg.get("link_length", 1.0))
    mass = float(cfg.get("link_mass", 1.0))
    model = pendulum_chain(n, [length] * n, [mass] * n)
    system = ParametricSystem(model, pendulum_length_binding(n, [mass] * n))
    theta = np.full(n, length)
    x0 = np.concatenate([rng.uniform(-0.5, 0.5, n), np.zeros(n)])
    t1 = float(cfg.get("t1", 1.0))
    icfg = _integrator(dict(cfg.get("integrator_options", {}), method=cfg.get("integrator", "rk4"), dt=dt))
    quantity = cfg.get("quantity", "loss")
    target = None if quantity == "jacobian" else LossTarget.squared_error([t1], [np.zeros(2 * n)])
    req = GradientRequest(system, theta, x0, 0.0, t1, icfg, None, target)
    engine = ENGINES[method]
    kwargs = {"tape_limit": int(cfg["tape_limit"])} if method == "reverse_ad" and "tape_limit" in cfg else {}
    start = time.perf_counter()
    rep_ = engine(req, **kwargs)
    wall = time.perf_counter() - start
    v = np.asarray(rep_.value, dtype=float)
    weights = np.arange(1, v.size + 1, dtype=float).reshape(v.shape)
    checksum = float(np.sum(weights * v))
    c = rep_.counters
    return [method, n, dt, c.rhs_evaluations, c.tape_variables, wall, checksum]


def cmd_benchmark(cfg: dict, out: Path, seed: int) -> int:
    links = _get(cfg, "links", list, [2])
    dts = _get(cfg, "dt", list, [0.01])
    methods = _get(cfg, "methods", list, list(METHOD_ORDER))
    reps = _get(cfg, "repetitions", int, 1)
    integrator = cfg.get("integrator", "rk4")
    quantity = cfg.get("quantity", "loss")
    if not links or any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in links):
        raise ConfigError("links must be a list of positive integers")
    if not dts or any(not isinstance(d, (int, float)) or d <= 0 for d in dts):
        raise ConfigError("dt must be a list of positive numbers")
    if reps < 1:
        raise ConfigError("repetitions must be at least 1")
    bad = [m for m in methods if m not in ENGINES]
    if bad:
        raise ConfigError(f"unknown methods {bad}")
    if integrator not in METHODS:
        raise ConfigError(f"unknown integrator {integrator!r}")
    if quantity not in ("loss", "jacobian"):
        raise ConfigError("quantity must be 'loss' or 'jacobian'")
    if quantity == "jacobian" and "adjoint" in methods:
        raise ConfigError("the adjoint method computes loss gradients only")
    if integrator in ("dopri45", "fehlberg45") and "reverse_ad" in methods:
        raise ConfigError("reverse_ad needs a fixed-step integrator")
    order = sorted(set(methods), key=METHOD_ORDER.index)
    header = ["method", "n", "dt", "rhs_evals", "tape_vars", "wall_time_s", "grad_checksum"]
    rows = []
    status = EXIT_OK
    error = None
    try:
        for method in order:
            for n in sorted(links):
                for dt in sorted(float(d) for d in dts):
                    for rep in range(reps):
                        rows.append(_benchmark_cell(method, n, dt, cfg, seed, rep))
    except IntegrationError as e:
        status, error = EXIT_DIVERGED, f"{type(e).__name__}: {e}"
    except (ArithmeticError, MemoryError, ValueError) as e:
        status, error = EXIT_OPTIMIZER, f"{type(e).__name__}: {e}"
    write_csv(out / "benchmark.csv", header, rows)
    summary = {
        "command": "benchmark",
        "seed": seed,
        "integrator": integrator,
        "integrator_tolerances": {"abs": float(cfg.get("integrator_options", {}).get("abs_tol", 1e-6)),
                                  "rel": float(cfg.get("integrator_options", {}).get("rel_tol", 1e-6)),
                                  "note": "tolerances are a configuration choice"},
        "quantity": quantity,
        "t1": float(cfg.get("t1", 1.0)),
        "rows": len(rows),
        "counts": [{"method": r[0], "n": r[1], "dt": r[2], "rhs_evals": r[3], "tape_vars": r[4],
                    "grad_checksum": r[6]} for r in rows],
        "error": error,
    }
    write_summary(out, summary)
    if error:
        print(f"benchmark failed: {error}", file=sys.stderr)
    return status


# ------------------------------------------------------------------- estimate

def cmd_estimate(cfg: dict, out: Path, seed: int) -> int:
    model = _model(cfg, _get(cfg, "model"))
    binding = _binding(_get(cfg, "binding"))
    ref_path = _path(cfg, _get(cfg, "reference", str))
    try:
        ref = ReferenceTrajectory.load(ref_path)
    except FileNotFoundError:
        raise ConfigError(f"reference file not found: {ref_path}") from None
    except (OSError, ValueError) as e:
        raise ConfigError(f"reference file {ref_path}: {e}") from None
    try:
        system = ParametricSystem(model, binding, tuple(cfg.get("u_map", ())))
    except ModelError as e:
        raise ConfigError(f"binding: {e}") from None
    theta0 = _vector(_get(cfg, "theta0"), system.ntheta, "theta0")
    method = cfg.get("method", "coupled")
    if method not in ENGINES:
        raise ConfigError(f"unknown gradient method {method!r}")
    icfg = _integrator(cfg.get("integrator"), float(np.min(np.diff(ref.times))) if len(ref.times) > 1 else 0.01)
    opt = _optimizer(cfg.get("optimizer"))
    controls = cfg.get("controls")
    try:
        res = estimate_parameters(system, theta0, ref, method, opt, icfg, controls)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    o = res.optimizer
    header = ["iteration", "loss"] + [f"theta{i}" for i in range(system.ntheta)]
    rows = [[i, float(f)] + [float(v) for v in x] for i, (f, x) in enumerate(zip(o.losses, o.iterates))]
    write_csv(out / "loss_curve.csv", header, rows)
    names = binding.names(model)
    write_summary(out, {
        "command": "estimate",
        "seed": seed,
        "method": method,
        "status": o.status,
        "iterations": o.iterations,
        "evaluations": o.evaluations,
        "loss": o.f,
        "grad_max": float(np.max(np.abs(o.grad), initial=0.0)),
        "grad_tol": opt.grad_tol,
        "theta": list(res.theta),
        "parameters": dict(zip(names, res.theta)),
    })
    if o.status != "converged":
        print(f"estimate: optimizer stopped with status {o.status!r} after {o.iterations} iterations, "
              f"loss {o.f:.6g}, max |grad| {np.max(np.abs(o.grad)):.3g} > {opt.grad_tol:g}", file=sys.stderr)
        return EXIT_OPTIMIZER
    return EXIT_OK


# --------------------------------------------------------------------- design

def design_problem(cfg: dict, seed: int):
    """True DH design, start design, joint configurations and target positions."""
    true = _get(cfg, "true_dh", dict)
    try:
        dh_true = DHParams(tuple(map(float, true["d"])), tuple(map(float, true["a"])),
                           tuple(map(float, true["alpha"])))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"true_dh: {e}") from None
    n_cfg = _get(cfg, "configurations", int, 50)
    pert = float(_get(cfg, "perturbation", (int, float), 0.3))
    if n_cfg < 1 or pert < 0:
        raise ConfigError("configurations must be positive and perturbation non-negative")
    q_lo, q_hi = cfg.get("q_range", [-math.pi, math.pi])
    rng = np.random.default_rng(seed)
    q_traj = rng.uniform(q_lo, q_hi, size=(n_cfg, dh_true.n))
    p_traj = np.array([[float(c) for c in p] for p in end_effector_positions(dh_true, q_traj)])
    start = dh_true.flat() * (1.0 + rng.uniform(-pert, pert, size=3 * dh_true.n))
    return dh_true, DHParams.from_flat(start), q_traj, p_traj


def cmd_design(cfg: dict, out: Path, seed: int) -> int:
    dh_true, dh0, q_traj, p_traj = design_problem(cfg, seed)
    opt = _optimizer(cfg.get("optimizer"), max_iters=200, grad_tol=1e-10)
    free = cfg.get("free")
    res = design_arm(dh0, q_traj, p_traj, opt, free)
    n = dh_true.n
    header = ["iteration"] + [f"{k}{i + 1}" for i in range(n) for k in ("d", "a", "alpha")] + ["loss"]
    rows = [[i] + [float(v) for v in x] + [float(f)] for i, (x, f) in enumerate(zip(res.history, res.losses))]
    write_csv(out / "dh_history.csv", header, rows)
    o = res.optimizer
    rms = res.rms_error(q_traj, p_traj)
    write_summary(out, {
        "command": "design",
        "seed": seed,
        "status": o.status,
        "iterations": o.iterations,
        "loss": o.f,
        "rms_error_m": rms,
        "trajectory": "random joint configurations drawn from the seed",
        "final_dh": {"d": list(map(float, res.dh.d)), "a": list(map(float, res.dh.a)),
                     "alpha": list(map(float, res.dh.alpha))},
        "true_dh": {"d": list(dh_true.d), "a": list(dh_true.a), "alpha": list(dh_true.alpha)},
    })
    if o.status != "converged":
        print(f"design: optimizer stopped with status {o.status!r} after {o.iterations} iterations, "
              f"loss {o.f:.6g}", file=sys.stderr)
        return EXIT_OPTIMIZER
    return EXIT_OK


# ------------------------------------------------------------------------ mpc

def mpc_problem(cfg: dict, seed: int):
    """Everything :func:`control.adaptive_mpc` needs, built from a config."""
    n = _get(cfg, "poles", int)
    if n < 1:
        raise ConfigError("poles must be at least 1")
    mspec = dict(_get(cfg, "model", dict, {}))
    units = {k: float(mspec.pop(k)) for k in ("mass_unit", "length_unit") if k in mspec}
    model = _model(cfg, dict(mspec, preset="cartpole", n_poles=n))
    binding = cartpole_binding(n, **units)
    theta0 = _vector(_get(cfg, "theta0"), binding.arity, "theta0")
    lim = _get(cfg, "bounds", (int, float))
    bounds = control.ControlBounds.symmetric(float(lim))
    w = dict(_get(cfg, "cost", dict, {}))
    Q = np.full(control.observation_size(n), float(w.get("velocity", 0.1)))
    Q[0] = Q[2:2 + 2 * n] = float(w.get("pose", 1.0))
    Q[2 + 3 * n:] = float(w.get("acceleration", 0.1))
    S = float(w.get("terminal", 10.0)) * Q
    try:
        spec = control.CostSpec(tuple(Q), (float(w.get("control", 1e-3)),), tuple(S),
                                tuple(control.upright_goal(n)))
    except ValueError as e:
        raise ConfigError(f"cost: {e}") from None
    espec = dict(_get(cfg, "env", dict))
    if espec.pop("same_as_model", False):
        env_model = apply_parameters(model, binding, theta0)
    else:
        geom = {k: espec.pop(k) for k in ("cart_mass", "pole_masses", "pole_lengths", "com_fraction",
                                          "pivot_height", "inertia", "capsule_radius") if k in espec}
        env_model = _model(cfg, dict(geom, preset="cartpole", n_poles=n))
    perturbation = float(espec.pop("perturbation", 0.05))
    ecfg = _integrator(dict({"method": "dopri45", "dt": 0.0025, "abs_tol": 1e-9, "rel_tol": 1e-9,
                             "max_step": 0.0025}, **espec))
    env = control.ReferenceEnvironment(env_model, (0,), bounds, ecfg, control.CONTROL_DT, perturbation, seed)
    ispec = dict(cfg.get("ilqr", {}))
    try:
        icfg = control.ILQRConfig(dt=control.CONTROL_DT, method=ispec.get("method", "rk4"),
                                  max_iters=int(ispec.get("max_iters", 10)),
                                  substeps=int(ispec.get("substeps", 1)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"ilqr: {e}") from None
    fit = _optimizer(cfg.get("fit"), max_iters=25, f_tol=1e-6)
    run = dict(M=_get(cfg, "episodes", int), T=_get(cfg, "steps", int), H=_get(cfg, "horizon", int),
               warmup_fit_every=cfg.get("warmup_fit_every", 50), per_episode=cfg.get("per_episode", 100))
    if min(run["M"], run["T"], run["H"]) < 1:
        raise ConfigError("episodes, steps and horizon must be at least 1")
    return dict(env=env, m=model, binding=binding, theta0=theta0, spec=spec, bounds=bounds,
                ilqr_cfg=icfg, fit_opt=fit, **run)


def cmd_mpc(cfg: dict, out: Path, seed: int) -> int:
    prob = mpc_problem(cfg, seed)
    n = control._check_cartpole(prob["m"])
    res = control.adaptive_mpc(**prob)
    nobs = control.observation_size(n)
    header = ["t", "episode", "u"] + [f"obs{i}" for i in range(nobs)]
    write_csv(out / "steps.csv", header,
              [[float(t), ep, float(u[0])] + [float(v) for v in o] for t, ep, u, o in res.log])
    K = prob["binding"].arity
    write_csv(out / "theta_history.csv", ["fit_index"] + [f"theta{i}" for i in range(K)],
              [[i] + [float(v) for v in th] for i, th in enumerate(res.theta_history)])
    write_summary(out, {
        "command": "mpc",
        "seed": seed,
        "poles": n,
        "episode_costs": res.episode_costs,
        "success": res.success,
        "first_success": res.first_success,
        "diverged": res.diverged,
        "fit_iterations": res.fit_iterations,
        "fit_status": res.fit_status,
        "heldout_errors": res.heldout_errors,
        "transitions_per_episode": [len(b) for b in res.buffers],
        "theta_final": list(res.theta_history[-1]),
        "parameters": dict(zip(prob["binding"].names(prob["m"]), res.theta_history[-1])),
    })
    if res.diverged:
        print("mpc: environment diverged; partial results written", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


COMMANDS = {"benchmark": cmd_benchmark, "estimate": cmd_estimate, "design": cmd_design, "mpc": cmd_mpc}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sim", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
        seed = _seed(cfg, args.seed)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory {out}: {e}") from None
        return COMMANDS[args.command](cfg, out, seed)
    except ConfigError as e:
        print(f"sim {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as e:
        print(f"sim {args.command}: simulation diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"sim {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
