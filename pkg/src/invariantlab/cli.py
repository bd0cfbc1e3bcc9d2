"""Command-line experiment runner.

Subcommands:

* ``datagen``            write the configured datasets to disk
* ``train``              train one predictor, write summary/trace/predictor
* ``compare``            hold-one-out comparison table across configs
* ``measure-invariance`` per-example invariance values for a predictor
* ``verify``             run a named brute-force theory-check suite

Configs are INI files with ``[task]``, ``[solver]`` and optional
``[transform]`` / ``[output]`` sections.  Exit codes: 0 success, 1
configuration error, 2 runtime failure (partial trace still written).
"""

from __future__ import annotations

import argparse
import configparser
import sys
import time
from pathlib import Path

import numpy as np

from . import constraints as cons
from . import datagen
from . import predictors as pred
from . import solvers
from . import transforms
from . import verify as verify_mod


class ConfigError(ValueError):
    """Invalid or missing configuration; message names the key."""


# -- config parsing -----------------------------------------------------------

def load_config(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if "task" not in parser:
        raise ConfigError("missing section: task")
    return parser


def _get(section, key, cast, default=None):
    if key not in section:
        if default is not None:
            return default
        raise ConfigError(f"missing key: {key}")
    try:
        return cast(section[key])
    except ValueError as e:
        raise ConfigError(f"invalid value for key {key}: {e}") from None


def _env_map(text: str, key: str) -> dict:
    out = {}
    for item in text.split():
        if ":" not in item:
            raise ConfigError(f"invalid value for key {key}: {item!r}")
        env, val = item.split(":", 1)
        out[env] = float(val)
    if not out:
        raise ConfigError(f"empty value for key {key}")
    return out


def build_task(cfg: configparser.ConfigParser, seed: int):
    """Returns (datasets, transform model, task spec) for the config."""
    task = cfg["task"]
    kind = _get(task, "kind", str)
    if kind == "concept-shift":
        spec = datagen.ConceptShiftSpec(
            rho_shape=_get(task, "rho_shape", float, 0.75),
            env_agreements=_env_map(
                task.get("agreements", "e0.9:0.9 e0.8:0.8 e0.1:0.1"),
                "agreements"),
            n_per_env=_get(task, "n_per_env", int, 20000),
            shape_mean=_get(task, "shape_mean", float, 1.0),
            shape_sigma=_get(task, "shape_sigma", float, 1.0),
            color_scale=_get(task, "color_scale", float, 1.0))
        data = datagen.gen_concept_shift(spec, seed)
        G = datagen.concept_shift_transform(spec)
        return data, G, spec
    if kind == "covariate-shift":
        mean0 = np.array([float(v) for v in
                          _get(task, "mean0", str, "0.5 0").split()])
        mean1 = np.array([float(v) for v in
                          _get(task, "mean1", str, "2.0 0").split()])
        train_codes = {
            env: transforms.EnvironmentCode([angle]) for env, angle
            in _env_map(task.get("train_envs", "e0:0.0"),
                        "train_envs").items()}
        test_codes = {
            env: transforms.EnvironmentCode([angle]) for env, angle
            in _env_map(task.get("test_envs", "etest:1.5707963"),
                        "test_envs").items()}
        t = cfg["transform"] if "transform" in cfg else {}
        plane = tuple(int(v) for v in
                      str(t.get("plane", "0 1")).split())
        lo, hi = (float(v) for v in
                  str(t.get("angle_range", "0 6.2831853")).split())
        model = transforms.RotationModel(plane, (lo, hi))
        try:
            spec = datagen.CovariateShiftSpec(
                mean0=mean0, mean1=mean1,
                sigma=_get(task, "sigma", float, 0.4),
                model=model, train_codes=train_codes,
                test_codes=test_codes,
                noise_dims=_get(task, "noise_dims", int, 0))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        data = datagen.gen_covariate_shift(
            spec, _get(task, "n_per_env", int, 2000), seed)
        return data, model, spec
    raise ConfigError(f"invalid value for key kind: {kind!r}")


def build_solver_config(cfg: configparser.ConfigParser,
                        seed: int) -> solvers.SolverConfig:
    s = cfg["solver"] if "solver" in cfg else {}
    try:
        return solvers.SolverConfig(
            algorithm=str(s.get("algorithm", "mbdg")),
            eta_primal=float(s.get("eta_primal", 0.1)),
            eta_dual=float(s.get("eta_dual", 0.05)),
            gamma=float(s.get("gamma", 0.025)),
            weight=float(s.get("weight", 1.0)),
            batch_size=int(s.get("batch_size", 128)),
            steps=int(s.get("steps", 2000)),
            seed=seed,
            hidden=int(s.get("hidden", 16)),
            loss_bound=float(s.get("loss_bound", 20.0)),
            constraint_mode=str(
                s.get("constraint_mode", "pair-G-samples")),
            dual_mode=str(s.get("dual_mode", "single")))
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _resolve_seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    if "output" in cfg and "seed" in cfg["output"]:
        return _get(cfg["output"], "seed", int)
    return 0


def _resolve_out(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if "output" in cfg and "dir" in cfg["output"]:
        return Path(cfg["output"]["dir"])
    return Path(".")


def _resolve_holdout(args, cfg, data) -> str:
    if args.holdout:
        holdout = args.holdout
    elif "output" in cfg and "holdout" in cfg["output"]:
        holdout = cfg["output"]["holdout"]
    else:
        holdout = sorted(d.env for d in data)[0]
    if holdout not in {d.env for d in data}:
        raise ConfigError(f"invalid value for key holdout: {holdout!r}")
    return holdout


# -- train --------------------------------------------------------------------

def _final_distreg(p, train_data, G, metric, seed):
    out = {}
    for d in train_data:
        rng = np.random.default_rng([seed, 3])
        Xt = transforms.generate_batch(G, d.X, rng)
        out[d.env] = cons.dist_reg(p, (d.X, Xt), metric)
    return out


def _config_echo(cfg) -> list:
    lines = []
    for section in cfg.sections():
        for key, value in sorted(cfg[section].items()):
            lines.append(f"config_{section}.{key}={value}")
    return lines


def run_train(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    data, G, _ = build_task(cfg, seed)
    holdout = _resolve_holdout(args, cfg, data)
    scfg = build_solver_config(cfg, seed)
    train_data = [d for d in data if d.env != holdout]
    if not train_data:
        raise ConfigError("invalid value for key holdout: no training "
                          "environments left")
    t0 = time.time()
    try:
        p, trace = solvers.train(scfg, train_data, G)
    except solvers.TrainingFailure as e:
        (out / "trace.csv").write_text(e.trace.to_csv())
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    wall = time.time() - t0
    metric = cons.DistanceMetric(bound=scfg.loss_bound)
    loss_spec = pred.LossSpec(scfg.loss_bound)
    distreg = _final_distreg(p, train_data, G, metric, seed)
    worst, worst_env = solvers.worst_domain_risk(p, train_data, loss_spec)

    lines = [f"algorithm={scfg.algorithm}", f"seed={seed}",
             f"holdout={holdout}"]
    accs = []
    for d in sorted(data, key=lambda d: d.env):
        acc = pred.accuracy(p, d)
        accs.append(acc)
        lines.append(f"acc_{d.env}={acc!r}")
        lines.append(f"risk_{d.env}={pred.empirical_risk(p, d, loss_spec)!r}")
    lines.append(f"avg_accuracy={float(np.mean(accs))!r}")
    lines.append(f"worst_domain_risk={worst!r}")
    lines.append(f"worst_domain_env={worst_env}")
    lines.append("lambda=" + " ".join(repr(float(v))
                                      for v in trace.lam[-1]))
    for env in sorted(distreg):
        lines.append(f"distreg_{env}={distreg[env]!r}")
    lines.extend(_config_echo(cfg))
    lines.append(f"wall_clock_seconds={wall!r}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    (out / "trace.csv").write_text(trace.to_csv())
    (out / "predictor.txt").write_text(pred.save_text(p))
    return 0


# -- datagen ------------------------------------------------------------------

def run_datagen(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    data, _, _ = build_task(cfg, seed)
    (out / "datasets.txt").write_text(datagen.dump_datasets(
        sorted(data, key=lambda d: d.env)))
    return 0


# -- compare ------------------------------------------------------------------

def _task_text(cfg) -> str:
    if "task" not in cfg:
        raise ConfigError("missing section: task")
    return "\n".join(f"{k}={v}" for k, v in sorted(cfg["task"].items()))


def run_compare(args) -> int:
    if len(args.config) < 2:
        raise ConfigError("compare needs at least two --config paths")
    configs = [load_config(path) for path in args.config]
    tasks = {_task_text(c) for c in configs}
    if len(tasks) > 1:
        raise ConfigError("configs must share the task section")
    seed = args.seed if args.seed is not None else 0
    out = _resolve_out(args, configs[0])
    out.mkdir(parents=True, exist_ok=True)

    data0, _, _ = build_task(configs[0], seed)
    envs = sorted(d.env for d in data0)
    rows = []
    for cfg in configs:
        scfg = build_solver_config(cfg, seed)
        accs = []
        for holdout in envs:
            data, G, _ = build_task(cfg, seed)
            train_data = [d for d in data if d.env != holdout]
            p, _ = solvers.train(scfg, train_data, G)
            held = next(d for d in data if d.env == holdout)
            accs.append(pred.accuracy(p, held))
        rows.append((scfg.algorithm, accs))
    buf = ["algorithm," + ",".join(envs) + ",avg"]
    for name, accs in rows:
        cells = ",".join(f"{a:.17g}" for a in accs)
        buf.append(f"{name},{cells},{float(np.mean(accs)):.17g}")
    text = "\n".join(buf) + "\n"
    (out / "comparison.csv").write_text(text)
    sys.stdout.write(text)
    return 0


# -- measure-invariance -------------------------------------------------------

def run_measure_invariance(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _resolve_out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    data, G, _ = build_task(cfg, seed)
    holdout = _resolve_holdout(args, cfg, data)
    predictor_path = Path(args.predictor) if args.predictor \
        else out / "predictor.txt"
    if not predictor_path.exists():
        raise ConfigError(f"missing predictor file: {predictor_path}")
    p = pred.load_text(predictor_path.read_text())
    held = next(d for d in data if d.env == holdout)
    metric = cons.DistanceMetric()
    summary = verify_mod.measure_g_invariance(
        p, held, G, metric, samples_per_point=4, seed=seed)
    (out / "invariance.csv").write_text(summary.to_csv())
    print(f"median={summary.median!r}")
    return 0


# -- verify suites ------------------------------------------------------------

def _suite_duality():
    checks = []
    rng = np.random.default_rng(0)
    ok = True
    for _ in range(100):
        s = verify_mod.random_spec(rng)
        rep = verify_mod.gap_report(s, s.gamma)
        ok = ok and rep.gap >= -1e-9
    checks.append(("weak-duality-100-random-specs", ok))
    spec = verify_mod.convex_1d_instance()
    rep = verify_mod.gap_report(spec, 0.1)
    checks.append(("convex-1d-tightness", abs(rep.gap) <= 2e-3))
    sand_ok = True
    for _ in range(100):
        s = verify_mod.random_convex_spec(rng)
        coarse = verify_mod.ConstrainedProblemSpec(
            s.thetas[::10], s.R[::10], s.L[::10], s.gamma)
        try:
            verify_mod.parameterization_sandwich(s, coarse, s.gamma)
        except verify_mod.VerificationError:
            sand_ok = False
        except verify_mod.InfeasibleError:
            pass
    checks.append(("parameterization-sandwich-100-specs", sand_ok))
    return checks


def _suite_perturbation():
    spec = verify_mod.convex_1d_instance()
    gammas = [0.0, 0.05, 0.1]
    try:
        values = verify_mod.perturbation_curve(spec, gammas)
        curve_ok = True
    except verify_mod.VerificationError:
        values, curve_ok = [], False
    checks = [("monotone-curve", curve_ok)]
    if curve_ok:
        checks.append(("zero-margin-value", abs(values[0] - 0.25) <= 2e-3))
        checks.append(("curve-endpoint", abs(values[-1] - 0.16) <= 2e-3))
    return checks


def _suite_empirical_gap():
    pop = default_population(seed=1)
    try:
        means = verify_mod.empirical_gap_experiment(
            pop, [100, 400, 1600, 6400], trials=20, seed=2,
            lam_grid=verify_mod.default_lambda_grid(5.0, 0.05))
        return [("strictly-decreasing", True),
                ("final-third-of-initial", means[-1] <= means[0] / 3)]
    except verify_mod.VerificationError:
        return [("strictly-decreasing", False)]


def default_population(seed: int = 1,
                       n_pop: int = 13000) -> verify_mod.EmpiricalPopulation:
    """A two-Gaussian regression population over a 1-d predictor grid."""
    rng = np.random.default_rng(seed)
    thetas = np.linspace(-1.0, 1.0, 101)
    comp = rng.integers(0, 2, size=n_pop)
    x = np.where(comp == 1, 0.6, -0.2) + 0.8 * rng.standard_normal(n_pop)
    loss = (thetas[None, :] - x[:, None]) ** 2
    base = np.abs(0.5 - thetas)[None, :, None]
    noise = 0.05 * rng.standard_normal((n_pop, 1, 1))
    consm = np.broadcast_to(base + noise, (n_pop, 101, 1)).copy()
    return verify_mod.EmpiricalPopulation(
        thetas[:, None], loss, consm, gamma=0.3)


def _suite_schedule():
    spec = verify_mod.convex_1d_instance()
    rep = verify_mod.theorem2_schedule_check(spec, kappa=0.2, eta=0.1, B=2.0)
    rep0 = verify_mod.theorem2_schedule_check(spec, kappa=0.2, eta=0.0,
                                              B=2.0)
    return [("schedule-gap", rep.gap <= 0.05),
            ("negative-control", rep0.gap > 0.05)]


def _suite_slackness():
    spec = verify_mod.convex_1d_instance()
    rep = verify_mod.complementary_slackness_check(spec, 0.1)
    loose = verify_mod.convex_1d_instance(gamma=2.0)
    rep2 = verify_mod.complementary_slackness_check(loose, 2.0)
    return [("active-constraint-residual", rep.ok),
            ("inactive-constraint-zero",
             rep2.residual == 0.0 and float(rep2.lam_witness.sum()) == 0.0)]


SUITES = {
    "duality": _suite_duality,
    "perturbation": _suite_perturbation,
    "empirical-gap": _suite_empirical_gap,
    "schedule": _suite_schedule,
    "slackness": _suite_slackness,
}


def run_verify(args) -> int:
    if args.suite not in SUITES:
        print(f"unknown suite: {args.suite}", file=sys.stderr)
        return 1
    checks = SUITES[args.suite]()
    all_ok = True
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        all_ok = all_ok and ok
    return 0 if all_ok else 1


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invariantlab",
        description="constrained invariant-learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--holdout", default=None)

    common(sub.add_parser("datagen"))
    common(sub.add_parser("train"))
    cp = sub.add_parser("compare")
    cp.add_argument("--config", action="append", required=True)
    cp.add_argument("--seed", type=int, default=None)
    cp.add_argument("--out", default=None)
    cp.add_argument("--holdout", default=None)
    mi = sub.add_parser("measure-invariance")
    common(mi)
    mi.add_argument("--predictor", default=None)
    vp = sub.add_parser("verify")
    vp.add_argument("suite")
    vp.add_argument("--out", default=None)
    return parser


_HANDLERS = {
    "datagen": run_datagen,
    "train": run_train,
    "compare": run_compare,
    "measure-invariance": run_measure_invariance,
    "verify": run_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
