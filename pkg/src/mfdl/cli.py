"""Command-line entry point: ``mfdl <subcommand> [flags]``.

Every subcommand takes ``--seed``, ``--out DIR`` and ``--config FILE``.  A
config file is a JSON object whose keys are flag names (dashes or
underscores); explicit flags override it.  Exit status is 0 on success, 2
on usage errors and 1 on numeric failures.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .errors import MfdlError, NumericError
from .trace import fmt, write_csv

# per-subcommand parameters: name -> (type, default, help[, choices])
PARAMS = {
    "autodiff-demo": {
        "expr": (str, None, "prefix expression (default: the worked example)"),
        "x": (str, "0,1,pi", "evaluation point, comma separated; 'pi' allowed"),
        "v": (str, "2,1,0", "direction for the directional derivative"),
    },
    "uat": {
        "m": (int, 3, "square-approximator level"),
        "grid": (int, 1024, "number of grid intervals on [0, 1]"),
    },
    "optimize": {
        "objective": (str, "rosenbrock", "objective", ("quadratic", "rosenbrock", "least-squares", "logistic")),
        "method": (str, "bfgs", "optimizer", ("gd", "bfgs", "newton-cg")),
        "data": (str, None, "CSV: dataset (last column target) or quadratic rows [Q | b]"),
        "x0": (str, None, "start point, comma separated (default: zeros, or (-1.2, 1) for rosenbrock)"),
        "max_iter": (int, 1000, "iteration cap"),
        "tol": (float, 1e-6, "gradient-norm tolerance"),
    },
    "sgd-bench": {
        "method": (str, "sgd", "update rule", ("sgd", "momentum", "adagrad", "rmsprop", "adam", "adamw")),
        "n": (int, 101, "number of components (odd)"),
        "steps": (int, 5000, "iterations"),
        "alpha": (float, 0.1, "constant step size"),
        "c": (float, 1.0, "numerator of the Robbins-Monro schedule c/(k+k0)"),
        "schedule": (str, "constant", "step schedule", ("constant", "rm")),
        "k0": (float, 10.0, "offset of the Robbins-Monro schedule"),
        "batch": (int, 1, "mini-batch size"),
        "x0": (float, 1.0, "starting point"),
    },
    "rl": {
        "solver": (str, "vi", "planner or learner", ("vi", "pi", "q", "sarsa")),
        "mdp": (str, None, "MDP JSON file (default: built-in 4x4 gridworld)"),
        "epsilon": (float, 0.5, "exploration rate for q / sarsa"),
        "steps": (int, 50000, "environment steps for q / sarsa"),
        "tol": (float, 1e-10, "value-iteration tolerance"),
    },
    "node": {
        "demo": (str, "constant-drift", "demo system", ("constant-drift", "mlp")),
        "theta": (float, 0.5, "drift value for constant-drift"),
        "x0": (float, 0.0, "initial state"),
        "T": (float, 1.0, "horizon"),
        "h": (float, 0.01, "step size"),
        "method": (str, "rk4", "solver", ("euler", "midpoint", "rk4")),
    },
    "densctl": {
        "data": (str, None, "CSV of samples (default: 64 draws from N((2,2), 0.25 I))"),
        "steps": (int, 200, "Adam steps"),
        "alpha": (float, 1e-2, "Adam step size"),
        "hidden": (int, 8, "hidden width of the drift network"),
        "h": (float, 0.05, "solver step"),
        "T": (float, 1.0, "horizon"),
    },
    "gen": {
        "model": (str, "fm", "generative model", ("diffusion", "fm", "vae")),
        "data": (str, None, "CSV of training samples (default: 2000 draws from N((2,2), 0.25 I))"),
        "steps": (int, 2000, "training steps"),
        "samples": (int, 1000, "number of generated samples"),
        "sample_steps": (int, 100, "sampler steps"),
        "alpha": (float, 1e-2, "Adam step size"),
        "sampler": (str, "pf_ode", "diffusion sampler", ("em", "pf_ode")),
    },
    "stat": {
        "demo": (str, "ito", "demo", ("ito", "importance")),
        "paths": (int, 1000, "paths (ito) or base sample count (importance)"),
        "T": (float, 1.0, "horizon for the Ito check"),
    },
}

SUMMARIES = {
    "autodiff-demo": "evaluate a graph, its gradient and a directional derivative",
    "uat": "tabulate the ReLU square approximator f_m against x^2",
    "optimize": "run a deterministic optimizer on a benchmark objective",
    "sgd-bench": "stochastic gradient runs on f_i(x) = (x - z_i)^2",
    "rl": "solve an MDP by planning or tabular learning",
    "node": "neural-ODE adjoint gradient demo",
    "densctl": "train a density-control drift",
    "gen": "train a small generative model and sample from it",
    "stat": "Monte Carlo and SDE sanity demos",
}


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="mfdl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True
    for name, params in PARAMS.items():
        sp = sub.add_parser(name, help=SUMMARIES[name], description=SUMMARIES[name])
        sp.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
        sp.add_argument("--out", default=None, help="output directory (default .)")
        sp.add_argument("--config", default=None, help="JSON file of flag values")
        for key, spec in params.items():
            typ, default, text = spec[:3]
            kw = dict(type=typ, default=None, help=f"{text} (default {default})")
            if len(spec) > 3:
                kw["choices"] = spec[3]
            sp.add_argument("--" + key.replace("_", "-"), dest=key, **kw)
    return p


def _resolve(ns):
    """Merge defaults, config file and explicit flags (in increasing priority)."""
    params = PARAMS[ns.command]
    cfg = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                cfg = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    known = set(params) | {"seed", "out"}
    extra = {k: v for k, v in cfg.items() if k not in known}
    if extra and ns.command != "sgd-bench":
        raise UsageError(f"unknown config keys: {sorted(extra)}")
    out = {}
    for key, spec in params.items():
        typ, default = spec[0], spec[1]
        val = getattr(ns, key)
        if val is None:
            val = cfg.get(key, default)
            if val is not None:
                val = typ(val)
        if len(spec) > 3 and val is not None and val not in spec[3]:
            raise UsageError(f"--{key}: invalid choice {val!r}")
        out[key] = val
    out["seed"] = ns.seed if ns.seed is not None else int(cfg.get("seed", 0))
    out["out"] = ns.out if ns.out is not None else cfg.get("out", ".")
    out["extra"] = extra
    return out


def _vector(text):
    try:
        return np.array([math.pi if t.strip() == "pi" else float(t) for t in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse vector {text!r}") from None


def _path(a, name):
    os.makedirs(a["out"], exist_ok=True)
    return os.path.join(a["out"], name)


def _write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _samples_csv(path, X):
    X = np.atleast_2d(X)
    write_csv(path, [f"x{i + 1}" for i in range(X.shape[1])], X.tolist())


def _default_gaussian(seed, n, label):
    from .rng import make_rng
    return make_rng(seed, label).standard_normal((n, 2)) * 0.5 + 2.0


def _load_samples(path):
    from .objectives import load_matrix_csv
    try:
        return load_matrix_csv(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read data: {exc}") from None


# --- subcommands -----------------------------------------------------------

def cmd_autodiff_demo(a):
    from . import autodiff as ad
    g = ad.worked_example() if a["expr"] is None else ad.parse(a["expr"])
    x, v = _vector(a["x"]), _vector(a["v"])
    if x.size != g.input_count or v.size != g.input_count:
        raise UsageError(f"expression needs {g.input_count} coordinates")
    f, grad = ad.reverse_grad(g, x)
    _, dv = ad.forward_jvp(g, x, v)
    write_csv(_path(a, "autodiff.csv"), ["quantity", "index", "value"],
              [("f", 0, f)] + [("grad", i + 1, gi) for i, gi in enumerate(grad)] + [("dv", 0, dv)])
    print(f"f={fmt(f)} grad=({', '.join(fmt(t) for t in grad)}) dvf={fmt(dv)}")


def cmd_uat(a):
    from .uat import square_approx
    if a["grid"] < 1 or a["m"] < 0:
        raise UsageError("need --grid >= 1 and --m >= 0")
    x = np.arange(a["grid"] + 1) / a["grid"]
    fm = square_approx(a["m"], x)
    err = np.abs(x * x - fm)
    write_csv(_path(a, "uat.csv"), ["x", "f_m", "x2", "error"], zip(x, fm, x * x, err))
    print(f"m={a['m']} max_error={fmt(err.max())} at x={fmt(x[np.argmax(err)])}")


def cmd_optimize(a):
    from . import objectives as ob
    from .optim import LineSearchConfig, bfgs, gd_backtracking, newton_cg
    kind = a["objective"]
    if kind == "rosenbrock":
        obj = ob.rosenbrock()
    elif a["data"] is None:
        raise UsageError(f"--data is required for objective {kind}")
    elif kind == "quadratic":
        M = _load_samples(a["data"])
        obj = ob.quadratic(M[:, :-1], M[:, -1])
    else:
        try:
            data = ob.Dataset.from_csv(a["data"])
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read data: {exc}") from None
        obj = ob.least_squares(data) if kind == "least-squares" else ob.logistic_nll(data)
    if a["x0"] is not None:
        x0 = _vector(a["x0"])
    else:
        x0 = np.array([-1.2, 1.0]) if kind == "rosenbrock" else np.zeros(obj.n)
    if x0.size != obj.n:
        raise UsageError(f"--x0 needs {obj.n} entries")
    cfg = LineSearchConfig(eps_tol=a["tol"], max_iter=a["max_iter"])
    solver = {"gd": gd_backtracking, "bfgs": bfgs, "newton-cg": newton_cg}[a["method"]]
    x, trace = solver(obj, x0, cfg)
    trace.to_csv(_path(a, "trace.csv"))
    write_csv(_path(a, "solution.csv"), ["index", "x"], enumerate(x))
    print(f"f={fmt(obj.value(x))} grad_norm={fmt(np.linalg.norm(obj.grad(x)))} iterations={len(trace)}"
          f" status={trace.notes.get('status', 'ok')}")


def cmd_sgd_bench(a):
    from .objectives import sg_family
    from .optim import DEFAULTS, oscillation_band, robbins_monro, sg_run
    try:
        fam = sg_family(a["n"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    hyper = {k: float(v) for k, v in a["extra"].items() if k != "alpha"}
    unknown = set(hyper) - set(DEFAULTS[a["method"]])
    if unknown:
        raise UsageError(f"unknown hyperparameters for {a['method']}: {sorted(unknown)}")
    alpha = robbins_monro(a["k0"], a["c"]) if a["schedule"] == "rm" else a["alpha"]
    xs = sg_run(fam, a["x0"], a["steps"], alpha, a["seed"], a["batch"], a["method"], **hyper)
    write_csv(_path(a, "sg.csv"), ["iter", "x", "F"], ((k, x, fam.F(x)) for k, x in enumerate(xs)))
    band = oscillation_band(xs, min(1000, len(xs)))
    print(f"final_abs_x={fmt(abs(xs[-1]))} band90={fmt(band)} mean_last={fmt(np.mean(xs[-min(1000, len(xs)):]))}")


def cmd_rl(a):
    from . import rl
    if a["mdp"] is None:
        mdp = rl.gridworld()
    else:
        try:
            with open(a["mdp"]) as fh:
                mdp = rl.Mdp.from_json(fh.read())
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read MDP: {exc}") from None
    s = a["solver"]
    if s in ("vi", "pi"):
        res = rl.value_iteration(mdp, a["tol"]) if s == "vi" else rl.policy_iteration(mdp)
        v, pi, it = res.v, res.pi, res.iterations
        extra = {}
    else:
        cfg = rl.LearnerConfig(epsilon=a["epsilon"], max_steps=a["steps"])
        learn = rl.q_learning if s == "q" else rl.sarsa
        res = learn(mdp, cfg, a["seed"])
        v, pi, it = res.q.max(axis=1), rl.deterministic_policy(res.q.argmax(axis=1), mdp.n_actions), res.episodes
        extra = {"q": res.q.tolist(), "steps": res.steps}
    actions = [int(i) for i in pi.argmax(axis=1)]
    _write_json(_path(a, "policy.json"), dict(solver=s, actions=actions, v=[float(t) for t in v], iterations=it, **extra))
    print(f"solver={s} iterations={it} v_mean={fmt(np.mean(v))} actions={''.join(map(str, actions))}")


def cmd_node(a):
    from . import nn
    from .odeflow import MlpDrift, SolverConfig, constant_drift, node_grad
    cfg = SolverConfig(a["method"], a["h"], a["T"])
    if a["demo"] == "constant-drift":
        sys_ = constant_drift(1)
        sys_.theta = np.array([a["theta"]])
    else:
        spec = nn.MlpSpec((2, 8, 1), nn.Activation("tanh"))
        sys_ = MlpDrift(spec).system(nn.mlp_init(spec, a["seed"]))
    res = node_grad(sys_, [a["x0"]], lambda x: float(x[0]), lambda x: np.ones(1), cfg)
    traj = res.trajectory
    write_csv(_path(a, "trajectory.csv"), ["t", "x"], zip(traj.times, traj.states[:, 0]))
    write_csv(_path(a, "gradient.csv"), ["index", "dJ_dtheta"], enumerate(res.grad))
    print(f"J={fmt(res.J)} grad=({', '.join(fmt(t) for t in res.grad[:4])}{', ...' if res.grad.size > 4 else ''})"
          f" p_tau0={fmt(res.costate.p_tau)}")


def cmd_densctl(a):
    from . import nn
    from .odeflow import MlpDrift, SolverConfig, density_control_loss, train_density_control
    X = _default_gaussian(a["seed"], 64, "densctl_data") if a["data"] is None else _load_samples(a["data"])
    d = X.shape[1]
    if d > 8:
        raise UsageError("density control supports d <= 8")
    spec = nn.MlpSpec((d + 1, a["hidden"], d), nn.Activation("tanh"))
    drift = MlpDrift(spec)
    cfg = SolverConfig("rk4", a["h"], a["T"])
    theta, trace = train_density_control(drift, 0.5 * nn.mlp_init(spec, a["seed"]), X, a["steps"], a["alpha"], cfg)
    res = density_control_loss(drift, theta, X, cfg)
    trace.to_csv(_path(a, "trace.csv"))
    _samples_csv(_path(a, "terminal.csv"), res.x_T)
    print(f"loss={fmt(res.loss)} h_T={fmt(res.h_T)} terminal_mean=({', '.join(fmt(t) for t in res.x_T.mean(0))})")


def cmd_gen(a):
    from . import genmod as gm
    X = _default_gaussian(a["seed"], 2000, "gen_data") if a["data"] is None else _load_samples(a["data"])
    d = X.shape[1]
    if d > 8:
        raise UsageError("generative models support d <= 8")
    model = a["model"]
    if model == "fm":
        spec, theta, trace = gm.train_flow_matching(X, a["steps"], alpha=a["alpha"], seed=a["seed"])
        S = gm.fm_sample(gm.mlp_field(spec, theta), a["samples"], a["sample_steps"], a["seed"], d)
    elif model == "diffusion":
        sched = gm.Schedule.ou()
        spec, theta, trace = gm.train_denoiser(X, sched, a["steps"], alpha=a["alpha"], seed=a["seed"])
        score = gm.score_from_eps(gm.mlp_field(spec, theta), sched)
        S = gm.diffusion_sample(score, sched, a["sampler"], a["samples"], a["sample_steps"], a["seed"], d)
    else:
        nets, te, td, trace = gm.train_vae(X, a["steps"], alpha=a["alpha"], seed=a["seed"])
        S = gm.vae_sample(nets, td, a["samples"], a["seed"])
    trace.to_csv(_path(a, "trace.csv"))
    _samples_csv(_path(a, "samples.csv"), S)
    print(f"model={model} final_loss={fmt(trace.rows[-1][1])} sample_mean=({', '.join(fmt(t) for t in S.mean(0))})")


def cmd_stat(a):
    from .statutil import importance_estimate, ito_check, uniform_spec
    if a["demo"] == "ito":
        rows = []
        for h in (0.04, 0.02, 0.01, 0.005):
            rows.append((h, ito_check(a["T"], h, a["paths"], a["seed"])))
        write_csv(_path(a, "ito.csv"), ["h", "mean_abs_deviation"], rows)
        print("ito " + " ".join(f"h={fmt(h)}:{fmt(e)}" for h, e in rows))
    else:
        ind = lambda x: (x <= 0.5).astype(float)
        rows = []
        for k in range(3):
            n = a["paths"] * 10 ** k
            est, se = importance_estimate(uniform_spec(ind, n, a["seed"]))
            rows.append((n, est, se))
        write_csv(_path(a, "importance.csv"), ["N", "estimate", "std_error"], rows)
        print("importance " + " ".join(f"N={n}:{fmt(e)}+-{fmt(s)}" for n, e, s in rows))


COMMANDS = {
    "autodiff-demo": cmd_autodiff_demo,
    "uat": cmd_uat,
    "optimize": cmd_optimize,
    "sgd-bench": cmd_sgd_bench,
    "rl": cmd_rl,
    "node": cmd_node,
    "densctl": cmd_densctl,
    "gen": cmd_gen,
    "stat": cmd_stat,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:          # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        args = _resolve(ns)
        COMMANDS[ns.command](args)
    except UsageError as exc:
        print(f"mfdl {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"mfdl {ns.command}: numeric failure: {exc}", file=sys.stderr)
        return 1
    except (MfdlError, ValueError) as exc:
        print(f"mfdl {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
