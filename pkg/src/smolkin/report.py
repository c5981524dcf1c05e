"""Manifests, per-criterion summaries and plot-ready CSV output.

Every number is written with ``repr`` so the CSV and NDJSON files round-trip
exactly; any pretty table is built from these files, never the reverse.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
import zipfile
from dataclasses import asdict, dataclass, field
from importlib import metadata

import numpy as np

CRITERIA = (
    (1, "kernel_crossval", "Fredholm and Monte Carlo beta agree"),
    (2, "repulsion_detected", "h_N(1) near the recipe prediction and away from the naive one"),
    (3, "convergence_trend", "max-t error non-increasing in N"),
    (4, "stosszahlansatz", "ensemble ratio near 1 and improving with N"),
    (5, "collision_budget", "normalized integrated rate <= Z + 5 stderr"),
    (6, "killing_bounds", "0 <= u <= 1, exterior decay, monotone in W"),
    (7, "solver_closed_forms", "ODE/PDE closed forms and cross-checks"),
    (8, "micro_oracles", "free motion, frozen pairs, survivor rule, cells, determinism"),
    (9, "concentration", "no 4 sigma violation of the occupation bound"),
)
GATE_BAND = 0.07


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        from . import __version__
        return __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    command: str
    version: str = field(default_factory=code_version)
    start: str = field(default_factory=_now)
    end: str | None = None
    replica_seeds: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None

    def finish(self, out_dir):
        """Stamp the end time and digest every file under ``out_dir``."""
        self.end = _now()
        self.files = {}
        for root, _, names in os.walk(out_dir):
            for n in sorted(names):
                if n == "manifest.json":
                    continue
                p = os.path.join(root, n)
                self.files[os.path.relpath(p, out_dir)] = sha256_file(p)
        self.files = dict(sorted(self.files.items()))
        write_json(os.path.join(out_dir, "manifest.json"), asdict(self))
        return self


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_ndjson(path, records):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(_clean(r), sort_keys=True) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            if isinstance(r, dict):
                r = [r[h] for h in header]
            w.writerow([_cell(v) for v in r])


# ---------------------------------------------------------------------------
# criterion evaluators: result object(s) -> (measured, gate, passed)


def _kernel(k):
    m = {"beta_fredholm": k.beta_fredholm, "beta_mc": k.beta_mc, "mc_stderr": k.mc_stderr,
         "envelope": k.envelope, "abs_diff": abs(k.beta_fredholm - k.beta_mc),
         "combined_error": k.combined_error, "rel_diff": k.rel_diff, "seconds": k.seconds,
         "beta_printed_c0": k.beta_printed_c0, "printed_c0_sigma": k.printed_c0_sigma}
    return m, "|dF-MC| <= 3 se + envelope and rel <= 0.02 and <= 120 s", \
        k.passed and k.seconds <= 120.0


def _repulsion(tc, N=2000):
    lv = tc.levels[N]
    k = int(np.argmin(np.abs(lv.curve.t - 1.0)))
    h = float(lv.curve.h[k])
    rec = float(tc.h_recipe(1.0))
    nai = float(tc.h_naive(1.0))
    ratio = tc.beta_naive / tc.beta_recipe if tc.beta_recipe > 0 else float("nan")
    ok = abs(h - rec) <= GATE_BAND * rec and abs(h - nai) > GATE_BAND * nai and ratio >= 1.25
    m = {"h_hat": h, "stderr": float(lv.curve.stderr[k]), "h_recipe": rec, "h_naive": nai,
         "beta_ratio": ratio, "alpha": tc.alpha, "seconds": lv.seconds}
    return m, "|h-h_rec| <= 7% h_rec, |h-h_naive| > 7% h_naive, naive/recipe >= 1.25", ok


def _trend(tc, Ns=(500, 1000, 2000)):
    errs = [tc.max_error(N) for N in Ns]
    ok = True
    for (e0, s0), (e1, s1) in zip(errs, errs[1:]):
        ok &= e1 <= e0 + math.hypot(s0, s1)
    m = {f"N={N}": {"max_error": e, "stderr": s} for N, (e, s) in zip(Ns, errs)}
    return m, "err(N') <= err(N) + 1 sigma for consecutive N", ok


def _sza(tc, small=500, big=2000):
    a, b = tc.levels[small], tc.levels[big]
    ok = 0.8 <= b.sza_ratio <= 1.2 and \
        abs(b.sza_ratio - 1) <= abs(a.sza_ratio - 1) + math.hypot(a.sza_stderr, b.sza_stderr)
    m = {f"N={N}": {"ratio": lv.sza_ratio, "stderr": lv.sza_stderr}
         for N, lv in sorted(tc.levels.items())}
    return m, "ratio(2000) in [0.8, 1.2] and |ratio-1| not larger than at N=500 (1 sigma)", ok


def _budget(runs):
    m = {r.label: {"value": r.result.value, "stderr": r.result.stderr, "Z": r.result.Z,
                   "count_value": r.result.count_value, "count_stderr": r.result.count_stderr}
         for r in runs}
    return m, "value <= Z + 5 stderr in every ensemble", all(r.result.within_bound for r in runs)


def _killing(s):
    m = {k: getattr(s, k) for k in ("n_potentials", "range_ok", "exterior_ok", "worst_exterior",
                                    "monotone_ok", "n_pairs", "worst_monotone", "seconds")}
    return m, "all potentials in range and below r^(2-d) outside, all pairs monotone, <= 300 s", \
        s.passed and s.seconds <= 300.0


def _solvers(c):
    m = {k: getattr(c, k) for k in ("torus_ode_error", "heat_error", "uniform_pde_ode_error",
                                    "uniformity_spread", "cross_integrator_error", "mass_defect",
                                    "leakage", "normal_ratio_ok")}
    m["domination_excess"] = c.domination.max_excess
    m["domination_tol"] = c.domination.tolerance
    return m, "ODE 1e-10, heat 1e-6, PDE/ODE 1e-8, cross 1e-6, mass 1e-6, domination", c.passed


def _micro(mo):
    m = {f"free_motion_m{f.mass}_z": f.z for f in mo.free_motion}
    m.update(frozen_ks_p=mo.frozen.ks_pvalue, survivor_z=mo.frozen.survivor_z,
             cell_mismatches=mo.cell_mismatches, deterministic=mo.deterministic)
    return m, "z <= 4, KS p >= 0.01, 0 mismatches, bit-exact", mo.passed


def _concentration(reports):
    m = {key: {"violations": r.violations, "K": r.K} for key, r in reports.items()}
    return m, "0 violations (p - 4 se > bound) over all boxes", \
        all(r.violations == 0 for r in reports.values())


EVALUATORS = {
    "kernel_crossval": ("kernel_crossval", _kernel),
    "repulsion_detected": ("torus_convergence", _repulsion),
    "convergence_trend": ("torus_convergence", _trend),
    "stosszahlansatz": ("torus_convergence", _sza),
    "collision_budget": ("collision_budget", _budget),
    "killing_bounds": ("killing_bounds", _killing),
    "solver_closed_forms": ("pde_vs_ode", _solvers),
    "micro_oracles": ("micro_oracles", _micro),
    "concentration": ("concentration", _concentration),
}


def criterion_records(results: dict, config_hash: str | None = None) -> list[dict]:
    """One summary record per acceptance criterion; missing inputs give ``not run``."""
    out = []
    for cid, name, desc in CRITERIA:
        key, fn = EVALUATORS[name]
        rec = {"criterion": cid, "name": name, "description": desc, "config_hash": config_hash}
        res = results.get(key)
        if res is None:
            rec.update(status="not run", measured=None, gate=None, passed=None)
        else:
            try:
                measured, gate, ok = fn(res)
                rec.update(status="pass" if ok else "fail", measured=measured, gate=gate,
                           passed=bool(ok))
            except KeyError as e:
                rec.update(status="not run", measured=None, gate=None, passed=None,
                           gap=f"missing input {e}")
        out.append(rec)
    return out


def format_line(rec: dict) -> str:
    return f"[{rec['status'].upper():>7}] criterion {rec['criterion']}: {rec['name']}"


# ---------------------------------------------------------------------------
# plot-ready tables


def torus_rows(tc):
    return tc.rows()


def write_pair_correlation(path, prof, u_field):
    ref = 1.0 - u_field(prof.r) if u_field is not None else np.ones_like(prof.r)
    write_csv(path, ["r", "g", "stderr", "one_minus_u"], zip(prof.r, prof.g, prof.stderr, ref))


TORUS_HEADER = ["N", "t", "h_hat", "stderr", "tracer", "tracer_stderr", "h_recipe", "h_naive"]


def emit_report(results: dict, out_dir, manifest: RunManifest | None = None) -> list[dict]:
    """Write ``summary.ndjson`` plus one CSV per available result."""
    os.makedirs(out_dir, exist_ok=True)
    recs = criterion_records(results, manifest.config_hash if manifest else None)
    write_ndjson(os.path.join(out_dir, "summary.ndjson"), recs)
    tc = results.get("torus_convergence")
    if tc is not None:
        write_csv(os.path.join(out_dir, "torus_curves.csv"), TORUS_HEADER, tc.rows())
        write_csv(os.path.join(out_dir, "stosszahlansatz.csv"), ["N", "ratio", "stderr", "seconds"],
                  [[N, lv.sza_ratio, lv.sza_stderr, lv.seconds] for N, lv in sorted(tc.levels.items())])
        write_json(os.path.join(out_dir, "torus_betas.json"),
                   {"alpha": tc.alpha, "beta_recipe": tc.beta_recipe,
                    "beta_envelope": tc.beta_envelope, "beta_naive": tc.beta_naive})
        if manifest is not None:
            manifest.replica_seeds.update({f"N={N}": lv.replica_seeds
                                           for N, lv in sorted(tc.levels.items())})
    g = results.get("pair_correlation")
    if g is not None:
        write_pair_correlation(os.path.join(out_dir, "pair_correlation.csv"), *g)
    k = results.get("kernel_crossval")
    if k is not None:
        write_json(os.path.join(out_dir, "kernel_crossval.json"), asdict(k))
    for key in ("killing_bounds", "micro_oracles"):
        if results.get(key) is not None:
            write_json(os.path.join(out_dir, f"{key}.json"), asdict(results[key]))
    b = results.get("collision_budget")
    if b is not None:
        write_csv(os.path.join(out_dir, "collision_budget.csv"),
                  ["label", "value", "stderr", "count_value", "count_stderr", "Z", "n_replicas"],
                  [[r.label, r.result.value, r.result.stderr, r.result.count_value,
                    r.result.count_stderr, r.result.Z, r.result.n_replicas] for r in b])
    c = results.get("concentration")
    if c is not None:
        rows = []
        for key, rep in c.items():
            for s, p, se, bd in zip(rep.sides, rep.empirical, rep.stderr, rep.bound):
                rows.append([key, rep.k, s, p, se, bd])
        write_csv(os.path.join(out_dir, "concentration.csv"),
                  ["case", "k", "side", "p_hat", "stderr", "bound"], rows)
    return recs


# ---------------------------------------------------------------------------
# per-replica files


def save_npz(path, arrays: dict):
    """Like ``np.savez`` but with fixed zip timestamps, so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arrays[name]), allow_pickle=False)


@dataclass
class SavedRecord:
    """A trajectory as stored on disk, usable wherever an encounter record is.

    ``death_time`` is ``inf`` for particles alive at ``T`` whichever engine
    produced it.
    """

    engine: str
    N: int
    T: float
    epsilon: float
    death_time: np.ndarray
    final_mass: np.ndarray
    events: np.ndarray
    acc_unordered: float
    acc_by_mass: np.ndarray
    acc_weighted: np.ndarray | None
    snapshots: list
    g_hist: np.ndarray
    g_rmax: float
    g_window: tuple

    def survival(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([(self.death_time > ti).sum() for ti in t]) / self.N

    def tracer_alive(self, t, tracer: int = 0) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return (self.death_time[tracer] > t).astype(int)

    @classmethod
    def from_run(cls, rec) -> "SavedRecord":
        """Wrap an ``EncounterRecord`` or a fixed-step ``RunRecord``."""
        if hasattr(rec, "acc_unordered"):
            ev = np.array([[e.time, e.id_i, e.id_j, e.m_i, e.m_j,
                            -1 if e.survivor is None else e.survivor] for e in rec.events],
                          dtype=float).reshape(-1, 6)
            return cls("encounter", rec.N, rec.T, rec.epsilon, np.asarray(rec.death_time, float),
                       rec.final_mass, ev, rec.acc_unordered, rec.acc_by_mass, None,
                       list(rec.snapshots), np.asarray(rec.g_hist), rec.g_rmax, rec.g_window)
        from .analysis import _traj
        tr = _traj(rec)
        death = np.where(np.isnan(rec.final.death_time), np.inf, rec.final.death_time)
        ev = np.array([[e.time, e.id_i, e.id_j, e.m_i, e.m_j,
                        -1 if e.survivor is None else e.survivor] for e in rec.events],
                      dtype=float).reshape(-1, 6)
        return cls("stepper", tr.N, tr.T, tr.epsilon, death, rec.final.masses.copy(), ev,
                   tr.unordered, tr.by_mass, tr.weighted, tr.snapshots, np.zeros(0), 0.0,
                   (0.0, 0.0))

    def save(self, path):
        arrays = {"death_time": self.death_time, "final_mass": self.final_mass,
                  "events": self.events, "acc_by_mass": self.acc_by_mass, "g_hist": self.g_hist,
                  "scalars": np.array([self.N, self.T, self.epsilon, self.acc_unordered,
                                       self.g_rmax, self.g_window[0], self.g_window[1]]),
                  "engine": np.array(self.engine),
                  "snap_times": np.array([s.time for s in self.snapshots], dtype=float)}
        if self.acc_weighted is not None:
            arrays["acc_weighted"] = self.acc_weighted
        for k, s in enumerate(self.snapshots):
            arrays[f"snap{k}_positions"] = s.positions
            arrays[f"snap{k}_masses"] = s.masses
            arrays[f"snap{k}_ids"] = s.ids
        save_npz(path, arrays)

    @classmethod
    def load(cls, path) -> "SavedRecord":
        from .sim.state import Snapshot
        z = np.load(path)
        N, T, eps, acc, grmax, w0, w1 = z["scalars"].tolist()
        snaps = [Snapshot(float(t), z[f"snap{k}_positions"], z[f"snap{k}_masses"],
                          z[f"snap{k}_ids"]) for k, t in enumerate(z["snap_times"])]
        return cls(str(z["engine"]), int(N), T, eps, z["death_time"], z["final_mass"],
                   z["events"], acc, z["acc_by_mass"],
                   z["acc_weighted"] if "acc_weighted" in z.files else None, snaps, z["g_hist"],
                   grmax, (w0, w1))
