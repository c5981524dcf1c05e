"""Command line entry point.

    smolkin <simulate|kernel|pde|ode|analyze|experiment> --config PATH --seed U64 --out DIR
            [--replicas K] [--workers W]

Every run writes ``manifest.json`` (config hash, version, seed, wall times,
replica seeds and a sha256 digest of each output file) next to its results.
"""
from __future__ import annotations

import argparse
import contextlib
import glob
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import config as cf
from . import experiments as ex
from . import kernel as kr
from . import plotting, report, solvers
from .analysis import (MollifierSpec, TestFunctionSpec, collision_budget, concentration_check,
                       dyadic_sides, pair_correlation_profile, sobol_boxes,
                       stosszahlansatz_ratio)
from .ensemble import run_replicas
from .errors import InsufficientStatistics, SmolkinError
from .params import ModelParams
from .rng import replica_seeds
from .sim.encounter import EncounterPolicy
from .sim.run import AliveObserver, MassObserver, SnapshotObserver, TracerObserver, run
from .sim.state import EVENT_HEADER
from .sim.stepper import StepPolicy
from .sim.torus import run_encounter

COMMANDS = ("simulate", "kernel", "pde", "ode", "analyze", "experiment")
EXPERIMENTS = ("torus_convergence", "kernel_crossval", "stosszahlansatz_trend", "pde_vs_ode",
               "killing_bounds", "collision_budget", "micro_oracles", "pair_correlation",
               "acceptance")


class Stage:
    """Names the running stage so a failure can be reported in the manifest."""

    def __init__(self, manifest: report.RunManifest):
        self.manifest = manifest
        self.name = None

    @contextlib.contextmanager
    def __call__(self, name: str):
        self.name = name
        yield
        self.name = None


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smolkin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="TOML configuration file")
        s.add_argument("--seed", type=_u64, default=0, help="root seed (unsigned 64-bit)")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--replicas", type=int, default=None, help="ensemble size")
        s.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: $SMOLKIN_WORKERS or 1)")
    return p


# ---------------------------------------------------------------------------
# simulate


def _stepper_replica(seed, params, domain, T, policy, observers, times, snapshot_times,
                     annihilation, test_function):
    obs = []
    for name in observers:
        if name == "alive":
            obs.append(AliveObserver(times))
        elif name == "tracer":
            obs.append(TracerObserver(times))
        elif name == "mass":
            obs.append(MassObserver(times))
        else:
            raise cf.ConfigurationError(f"unknown observer {name!r}")
    if len(snapshot_times):
        obs.append(SnapshotObserver(snapshot_times))
    return run(params, domain, T, policy, obs, seed=seed, annihilation=annihilation,
               test_function=test_function)


def _test_function(run_cfg):
    tf = run_cfg.get("test_function")
    if tf is None:
        return None
    return TestFunctionSpec(float(tf.get("amplitude", 1.0)), float(tf.get("radius", 0.0)),
                            tuple(tf.get("center", (0.5, 0.5, 0.5))))


def simulate_records(cfg: dict, seed: int, n_replicas: int, workers):
    """Run the configured ensemble; returns ``(records, times)``."""
    params = cf.model_from_config(cfg)
    domain = cf.domain_from_config(cfg)
    rc = cfg.get("run", {})
    T = float(rc.get("T", 1.0))
    times = np.asarray(rc.get("times", [0.0, T]), dtype=float)
    snaps = tuple(float(t) for t in rc.get("snapshot_times", []))
    annihilation = bool(rc.get("annihilation", False))
    engine = rc.get("engine", "stepper")
    if engine == "encounter":
        if not domain.periodic:
            raise cf.ConfigurationError("the encounter engine runs on the torus only")
        policy = EncounterPolicy(c_dt=float(rc.get("c_dt", 0.02)),
                                 coarse_dt=float(rc.get("coarse_dt", 2.0 ** -15)),
                                 max_rate_dt=float(rc.get("max_rate_dt", 0.2)))
        recs = run_replicas(run_encounter, n_replicas, seed, workers, params=params, T=T,
                            policy=policy, annihilation=annihilation, snapshot_times=snaps,
                            L=domain.L)
    elif engine == "stepper":
        policy = StepPolicy(float(rc.get("c_dt", 0.05)), float(rc.get("max_rate_dt", 0.2)))
        recs = run_replicas(_stepper_replica, n_replicas, seed, workers, params=params,
                            domain=domain, T=T, policy=policy,
                            observers=tuple(rc.get("observers", ["alive", "tracer"])),
                            times=times, snapshot_times=snaps, annihilation=annihilation,
                            test_function=_test_function(rc))
    else:
        raise cf.ConfigurationError(f"unknown engine {engine!r}")
    return recs, times


def _observer_rows(rec, k, seed, times):
    if hasattr(rec, "observers"):
        for r in rec.records():
            yield {"replica": k, "seed": seed, **r}
        return
    alive = rec.alive_count(times)
    tracer = rec.tracer_alive(times)
    for t, a, tr in zip(times, alive, tracer):
        yield {"replica": k, "seed": seed, "t": float(t), "t_actual": float(t), "name": "alive",
               "value": int(a), "extra": {}}
        yield {"replica": k, "seed": seed, "t": float(t), "t_actual": float(t), "name": "tracer",
               "value": int(tr), "extra": {}}


def cmd_simulate(cfg, args, manifest, stage):
    K = args.replicas or 1
    with stage("simulate"):
        recs, times = simulate_records(cfg, args.seed, K, args.workers)
    seeds = replica_seeds(args.seed, K)
    manifest.replica_seeds["simulate"] = seeds
    with stage("write"):
        rows, events = [], []
        for k, (rec, s) in enumerate(zip(recs, seeds)):
            rows.extend(_observer_rows(rec, k, s, times))
            for e in rec.events:
                events.append([k] + e.row())
            report.SavedRecord.from_run(rec).save(os.path.join(args.out, f"replica_{k:04d}.npz"))
        report.write_ndjson(os.path.join(args.out, "records.ndjson"), rows)
        report.write_csv(os.path.join(args.out, "events.csv"), ["replica"] + EVENT_HEADER, events)


# ---------------------------------------------------------------------------
# kernel / pde / ode


def _c0(value, d):
    if value is None or value == "standard":
        return None
    if value == "printed":
        return kr.green_constant(d, "printed")
    return float(value)


def kernel_for(cfg: dict, section: str, params: ModelParams | None, M: int):
    """``beta`` from ``[section].beta``: a number, or "recipe" to compute the table."""
    b = cfg.get(section, {}).get("beta", "recipe")
    if isinstance(b, str):
        if b != "recipe":
            raise cf.ConfigurationError(f"[{section}].beta must be a number or 'recipe'")
        if params is None:
            raise cf.ConfigurationError("beta = 'recipe' needs a [model] section")
        kc = cfg.get("kernel", {})
        # masses past the parameter tables reuse the boundary entries
        return kr.compute_kernel_table(params, M, resolution=int(kc.get("resolution", 256)))
    return float(b)


def cmd_kernel(cfg, args, manifest, stage):
    params = cf.model_from_config(cfg)
    kc = cfg.get("kernel", {})
    M = int(kc.get("M", 4))
    method = kc.get("method", "fredholm")
    res = int(kc.get("resolution", 256))
    c0 = _c0(kc.get("c0"), params.dimension)
    with stage("kernel"):
        if c0 is None:
            table = kr.compute_kernel_table(params, M, method, res, int(kc.get("n_paths", 100_000)),
                                            args.seed)
        else:
            B = np.array([[kr.compute_beta(i, j, params, method, res, seed=args.seed, c0=c0)[0]
                           for j in range(1, M + 1)] for i in range(1, M + 1)])
            table = kr.KernelTable(B, np.zeros_like(B), method + "+c0", params)
    with stage("write"):
        table.to_csv(os.path.join(args.out, "kernel_table.csv"))
        naive = [[i + 1, j + 1, kr.beta_naive(i + 1, j + 1, params)]
                 for i in range(M) for j in range(M)]
        report.write_csv(os.path.join(args.out, "kernel_naive.csv"), ["n", "m", "beta_naive"], naive)
        for n, m in kc.get("field_pairs", []):
            f = kr.solve_u_fredholm(kr.KillingProblem.for_pair(n, m, params), res, c0)
            f.to_csv(os.path.join(args.out, f"u_{n}_{m}.csv"))
        if M > 1:
            plotting.kernel_table(table, os.path.join(args.out, "kernel_table.png"))


def _model_or_none(cfg):
    return cf.model_from_config(cfg) if "model" in cfg else None


def _diffusivity(params, M):
    if params is not None:
        return np.array([params.d_of(n) for n in range(1, M + 1)])
    return np.ones(M)


def cmd_pde(cfg, args, manifest, stage):
    pc = cfg.get("pde", {})
    params = _model_or_none(cfg)
    shape = tuple(int(k) for k in pc.get("shape", (32, 32, 32)))
    kind = pc.get("kind", "torus")
    h = float(pc.get("h", 1.0 / shape[0]))
    grid = solvers.Grid(shape, h, kind)
    M = int(pc.get("M", 8))
    T = float(pc.get("T", 0.1))
    dt = float(pc.get("dt", h * h / 6))
    init = pc.get("init", "model")
    with stage("initial data"):
        if init == "model":
            if params is None:
                raise cf.ConfigurationError("init = 'model' needs a [model] section")
            f = np.zeros((M,) + shape)
            pts = grid.points()
            for prof in params.initial_profiles:
                if prof.mass <= M:
                    f[prof.mass - 1] += prof(pts).reshape(shape)
            state = solvers.PdeState(grid, f)
        else:
            state = solvers.uniform_state(grid, list(init) + [0.0] * (M - len(init)))
    with stage("kernel"):
        kern = kernel_for(cfg, "pde", params, M)
    dvec = _diffusivity(params, M)
    saves = [float(t) for t in pc.get("save_times", [0.0, T])]
    with stage("pde"):
        states = solvers.solve_pde(state, kern, dvec, T, dt, save_times=saves,
                                   react_cfl=float(pc.get("react_cfl", 0.1)))
    with stage("write"):
        report.save_npz(os.path.join(args.out, "pde_states.npz"),
                        {"t": np.array([s.t for s in states]),
                         "f": np.stack([s.f for s in states]),
                         "leakage": np.array([s.leakage for s in states])})
        report.write_csv(os.path.join(args.out, "pde_mass.csv"), ["t", "total_mass", "leakage"],
                         [[s.t, s.total_mass(), s.leakage] for s in states])
        plotting.pde_profile(states, os.path.join(args.out, "pde_profile.png"))


def cmd_ode(cfg, args, manifest, stage):
    oc = cfg.get("ode", {})
    params = _model_or_none(cfg)
    M = cf.ode_mass_cap(cfg)
    T = float(oc.get("T", 1.0))
    times = np.asarray(oc.get("times", np.linspace(0.0, T, 21)), dtype=float)
    init = oc.get("init", None)
    if init is None:
        if params is None:
            init = [1.0]
        else:
            w = params.mass_weights()
            init = [w.get(n, 0.0) for n in range(1, max(w) + 1)]
    with stage("kernel"):
        kern = kernel_for(cfg, "ode", params, M)
    with stage("ode"):
        traj = solvers.solve_homogeneous_ode(kern, init, T, M=M, t_eval=times,
                                             rtol=float(oc.get("rtol", 1e-11)))
    with stage("write"):
        rows = [[t, n + 1, traj.f[k, n]] for k, t in enumerate(traj.t) for n in range(M)]
        report.write_csv(os.path.join(args.out, "ode_concentrations.csv"), ["t", "n", "f"], rows)
        report.write_csv(os.path.join(args.out, "ode_totals.csv"),
                         ["t", "number", "total_mass", "leakage"],
                         [[t, traj.f[k].sum(), traj.total_mass()[k], traj.leakage[k]]
                          for k, t in enumerate(traj.t)])
        plotting.ode_spectrum(traj, os.path.join(args.out, "ode_spectrum.png"))


# ---------------------------------------------------------------------------
# analyze


def load_records(path) -> list:
    files = sorted(glob.glob(os.path.join(path, "replica_*.npz")))
    if not files:
        raise InsufficientStatistics(f"no replica_*.npz files under {path}")
    return [report.SavedRecord.load(f) for f in files]


def cmd_analyze(cfg, args, manifest, stage):
    ac = cfg.get("analyze", {})
    if "input" not in ac:
        raise cf.ConfigurationError("[analyze].input must name a simulate output directory")
    params = cf.model_from_config(cfg)
    domain = cf.domain_from_config(cfg)
    with stage("load"):
        recs = load_records(ac["input"])
    out = []
    n, m = int(ac.get("n", 1)), int(ac.get("m", 1))
    with stage("budget"):
        b = collision_budget(recs, params.Z)
        out.append({"diagnostic": "collision_budget", "value": b.value, "stderr": b.stderr,
                    "count_value": b.count_value, "count_stderr": b.count_stderr, "Z": b.Z,
                    "within_bound": b.within_bound, "estimators_agree": b.estimators_agree})
    if len(recs[0].snapshots) >= 2:
        with stage("stosszahlansatz"):
            beta = ac.get("beta", "recipe")
            beta = kr.compute_beta(n, m, params)[0] if beta == "recipe" else float(beta)
            r = stosszahlansatz_ratio(recs, n, m, beta, MollifierSpec(float(ac.get("delta", 0.25))),
                                      periodic=domain.periodic, L=domain.L)
            out.append({"diagnostic": "stosszahlansatz", "n": n, "m": m, "beta": beta,
                        "lhs": r.lhs, "rhs": r.rhs, "ratio": r.ratio, "stderr": r.stderr,
                        "n_replicas": r.n_replicas})
    if recs[0].snapshots and domain.periodic:
        with stage("concentration"):
            sides = dyadic_sides(params.N, L=domain.L)
            if sides:
                c, s = sobol_boxes(int(ac.get("n_boxes", 64)), sides, seed=args.seed, L=domain.L)
                times = ac.get("times", [recs[0].snapshots[0].time])
                for t in times:
                    snaps = [next(x for x in r.snapshots if abs(x.time - t) < 1e-12) for r in recs]
                    for k in ac.get("k", [1, 2, 3]):
                        rep = concentration_check(snaps, k, params, c, s, domain.L)
                        out.append({"diagnostic": "concentration", "t": t, "k": k, "K": rep.K,
                                    "violations": rep.violations, "passed": rep.passed})
    if recs[0].g_hist.size:
        with stage("pair correlation"):
            prof = pair_correlation_profile(recs, domain.L)
            alpha = float(params.alpha_of(1, 1))
            u = kr.solve_u_fredholm(kr.KillingProblem.for_pair(1, 1, params)) if alpha > 0 else None
            report.write_pair_correlation(os.path.join(args.out, "pair_correlation.csv"), prof, u)
            plotting.pair_correlation(prof, u, os.path.join(args.out, "pair_correlation.png"))
            out.append({"diagnostic": "pair_correlation",
                        "rank_correlation": prof.rank_correlation(1 - u(prof.r)) if u else None})
    with stage("write"):
        report.write_ndjson(os.path.join(args.out, "analysis.ndjson"), out)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentSpec:
    name: str
    overrides: dict = field(default_factory=dict)
    replicas: int | None = None
    seed: int = 0
    out: str = "."
    workers: int | None = None


def _override(spec, key, default):
    return spec.overrides.get(key, default)


def run_experiment(spec: ExperimentSpec, stage=None, manifest=None) -> dict:
    """Run the named experiment (or all of them for ``acceptance``) and write its report."""
    if spec.name not in EXPERIMENTS:
        raise cf.ConfigurationError(f"unknown experiment {spec.name!r}; one of {EXPERIMENTS}")
    stage = stage or (lambda name: contextlib.nullcontext())
    os.makedirs(spec.out, exist_ok=True)
    want = EXPERIMENTS[:-1] if spec.name == "acceptance" else (spec.name,)
    res: dict = {}
    if "kernel_crossval" in want:
        with stage("kernel_crossval"):
            res["kernel_crossval"] = ex.kernel_crossval(
                spec.seed, float(_override(spec, "alpha", ex.CANONICAL_ALPHA)),
                n_paths=int(_override(spec, "n_paths", 100_000)),
                resolution=int(_override(spec, "resolution", 256)))
    if "torus_convergence" in want or "stosszahlansatz_trend" in want:
        with stage("torus_convergence"):
            alpha = float(_override(spec, "alpha", ex.CANONICAL_ALPHA))
            Ns = tuple(int(n) for n in _override(spec, "Ns", ex.CONVERGENCE_NS))
            tc = ex.torus_convergence(alpha, Ns, spec.replicas or 128,
                                      float(_override(spec, "T", 1.0)), spec.seed, spec.workers,
                                      delta=float(_override(spec, "delta", 0.25)),
                                      n_boxes=int(_override(spec, "n_boxes", 64)))
            res["torus_convergence"] = tc
            big = max(Ns)
            res["concentration"] = {
                f"N={big},t={t},k={k}": ex.concentration_from_counts(
                    tc.levels[big], ex.torus_params(big, alpha), k, t)
                for t in ex.CONCENTRATION_TIMES if t in tc.levels[big].conc_counts["counts"]
                for k in (1, 2, 3)}
    if "pde_vs_ode" in want:
        with stage("pde_vs_ode"):
            res["pde_vs_ode"] = ex.pde_vs_ode()
    if "killing_bounds" in want:
        with stage("killing_bounds"):
            res["killing_bounds"] = ex.killing_bounds_suite(seed=spec.seed)
    if "collision_budget" in want:
        with stage("collision_budget"):
            res["collision_budget"] = ex.budget_ensembles(spec.seed, spec.replicas or 64,
                                                          spec.workers)
    if "micro_oracles" in want:
        with stage("micro_oracles"):
            res["micro_oracles"] = ex.micro_oracles(spec.seed)
    if "pair_correlation" in want:
        with stage("pair_correlation"):
            res["pair_correlation"] = ex.pair_correlation_experiment(
                seed=spec.seed, workers=spec.workers, n_replicas=spec.replicas or 64)
    with stage("report"):
        recs = report.emit_report(res, spec.out, manifest)
        _figures(res, spec.out)
        for r in recs:
            print(report.format_line(r))
    return res


def _figures(res, out):
    tc = res.get("torus_convergence")
    if tc is not None:
        plotting.survival_curves(tc, os.path.join(out, "survival.png"))
        if len(tc.levels) > 1 and tc.alpha > 0:
            plotting.stosszahlansatz_trend(tc, os.path.join(out, "stosszahlansatz.png"))
    g = res.get("pair_correlation")
    if g is not None:
        plotting.pair_correlation(g[0], g[1], os.path.join(out, "pair_correlation.png"))


def cmd_experiment(cfg, args, manifest, stage):
    ec = dict(cfg.get("experiment", {}))
    name = ec.pop("name", None)
    if name is None:
        raise cf.ConfigurationError("[experiment].name is required")
    reps = args.replicas if args.replicas is not None else ec.pop("replicas", None)
    ec.pop("replicas", None)
    spec = ExperimentSpec(name, ec, reps, args.seed, args.out, args.workers)
    run_experiment(spec, stage, manifest)


HANDLERS = {"simulate": cmd_simulate, "kernel": cmd_kernel, "pde": cmd_pde, "ode": cmd_ode,
            "analyze": cmd_analyze, "experiment": cmd_experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.replicas is not None and args.replicas < 1:
        print("smolkin: --replicas must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = cf.load_config(args.config)
    except (OSError, SmolkinError) as e:
        print(f"smolkin: {e}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    manifest = report.RunManifest(cf.config_hash(cfg), args.seed, args.command)
    report.write_json(os.path.join(args.out, "config.json"), cfg)
    stage = Stage(manifest)
    try:
        HANDLERS[args.command](cfg, args, manifest, stage)
    except (SmolkinError, ValueError, ArithmeticError) as e:
        manifest.failed_stage = stage.name or args.command
        manifest.error = f"{type(e).__name__}: {e}"
        manifest.finish(args.out)
        print(f"smolkin: {args.command} failed in stage {manifest.failed_stage!r}: {e}",
              file=sys.stderr)
        return 1
    manifest.finish(args.out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
