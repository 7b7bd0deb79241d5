"""Simulation sweeps, file-based fitting and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimator import SharedLatentSpaceModel
from .expfam import get_family
from .hunt import ScreeningError
from .metrics import STAGES, evaluate
from .netdata import load_factors, load_multiplex, save_factors, save_matrix, save_multiplex, MultiplexNetwork
from .simgen import GramDesign, derive_stream, generate_factors, generate_networks, mean_networks, row_bound

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["case", "family", "n", "k", "T", "rep", "stage", "dist2_Z", "max_dist2_W",
                  "gram_err_Z", "seconds", "status"]
SUMMARY_COLUMNS = ["case", "family", "n", "k", "T", "stage", "n_ok", "median_gram_err_Z",
                   "q05_gram_err_Z", "q95_gram_err_Z", "median_dist2_Z", "median_max_dist2_W"]
THREADS_ENV = "MLSM_NUM_THREADS"


@dataclass
class ExperimentPlan:
    case: str = "A"
    family: str = "gaussian"
    n: int = 200
    k: int = 2
    T_list: list = field(default_factory=lambda: [5, 10, 20, 40])
    replicates: int = 20
    seed: int = 0
    stages: list = field(default_factory=lambda: list(STAGES))
    output_dir: str = "results"
    phi: float = 0.1
    rho: float = 0.3
    T_o: int = 4
    eta: float = 1.0
    max_iter: int = 1000
    anchors: str = "hunt"
    timing: bool = True
    noiseless: bool = False

    def __post_init__(self):
        self.case = str(self.case).upper()
        self.family = get_family(self.family).name
        self.T_list = [int(t) for t in self.T_list]
        self.stages = [s for s in STAGES if s in set(self.stages)]
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.T_list or self.T_list != sorted(set(self.T_list)):
            raise ValueError("T_list must be non-empty and strictly ascending")
        if not self.stages:
            raise ValueError(f"stages must be a non-empty subset of {STAGES}")
        if self.noiseless and self.family != "gaussian":
            raise ValueError("noiseless networks can only be written for the gaussian family")
        for T in self.T_list:
            self.design(T)  # validates case parameters
            if self.n <= self.k * (1 + T):
                raise ValueError(f"n={self.n} must exceed k(1+T)={self.k * (1 + T)}")

    def design(self, T) -> GramDesign:
        return GramDesign(self.case, T, self.k, self.phi, self.rho, self.T_o)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(output_dir, plan_dict, files, name="manifest.json"):
    rel = sorted(os.path.relpath(p, output_dir) for p in files)
    manifest = {"plan": plan_dict, "files": {r: sha256_file(os.path.join(output_dir, r)) for r in rel}}
    path = os.path.join(output_dir, name)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def verify_manifest(path) -> list:
    """Return the files whose hash differs from the manifest (empty if all match)."""
    with open(path) as fh:
        manifest = json.load(fh)
    root = os.path.dirname(os.path.abspath(path))
    bad = []
    for rel, digest in manifest["files"].items():
        p = os.path.join(root, rel)
        if not os.path.exists(p) or sha256_file(p) != digest:
            bad.append(rel)
    return bad


# --- simulation -------------------------------------------------------------

def _simulated(plan, T, rep):
    f = generate_factors(plan.n, plan.design(T), derive_stream(plan.seed, T, rep, 0))
    if plan.noiseless:
        net = MultiplexNetwork(mean_networks(f, plan.family), plan.family)
    else:
        net = generate_networks(f, plan.family, derive_stream(plan.seed, T, rep, 1))
    return f, net


def simulate(plan: ExperimentPlan) -> str:
    """Write truth factors and networks per ``(T, replicate)``; return the manifest path."""
    os.makedirs(plan.output_dir, exist_ok=True)
    files = []
    for T in plan.T_list:
        for rep in range(plan.replicates):
            f, net = _simulated(plan, T, rep)
            d = os.path.join(plan.output_dir, f"T{T}", f"rep{rep}")
            os.makedirs(d, exist_ok=True)
            save_multiplex(net, os.path.join(d, "network.txt"))
            files.append(os.path.join(d, "network.txt"))
            files += save_factors(f, os.path.join(d, "truth"))
    return write_manifest(plan.output_dir, asdict(plan), files)


# --- fitting from files -----------------------------------------------------

def fit_network_file(network_file, k, dims, output_dir, truth_dir=None, **model_params):
    """Fit a network file and write per-stage estimates and diagnostics.

    Raises :class:`~multiplex_lsm.hunt.ScreeningError` when no pair of layers
    is usable.
    """
    net = load_multiplex(network_file)
    model = SharedLatentSpaceModel(n_shared=k, n_individual=dims, family=net.family,
                                   **model_params).fit(net)
    rep = model.report_
    os.makedirs(output_dir, exist_ok=True)
    files = []
    for stage, f in rep.stages.items():
        files += save_factors(f, os.path.join(output_dir, stage))
    for t, Y in enumerate(rep.individual):
        p = os.path.join(output_dir, "individual", f"Y_{t}.txt")
        os.makedirs(os.path.dirname(p), exist_ok=True)
        save_matrix(Y, p)
        files.append(p)

    p = os.path.join(output_dir, "screening.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "s", "ratio", "included"])
        for (t, s), r in sorted(rep.screening.ratios.items()):
            w.writerow([t, s, repr(r), int((t, s) in rep.screening)])
    files.append(p)

    p = os.path.join(output_dir, "loglik_trace.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "layer", "iteration", "loglik"])
        for t, tr in enumerate(rep.single_traces):
            w.writerows(["individual", t, i, repr(float(v))] for i, v in enumerate(tr))
        if rep.pgd_trace is not None:
            w.writerows(["pgd", "", i, repr(float(v))] for i, v in enumerate(rep.pgd_trace))
    files.append(p)

    errors = {}
    if truth_dir is not None:
        truth = load_factors(truth_dir)
        errors = {s: evaluate(f, truth, s).as_dict() for s, f in rep.stages.items()}
    summary = {
        "network_file": os.path.abspath(network_file),
        "n": net.n, "T": net.T, "family": net.family.name, "k": k, "dims": model.dims_,
        "tau1": rep.tau1, "M1": None if not np.isfinite(rep.M1) else rep.M1,
        "screened_pairs": [list(pair) for pair in rep.screening.pairs],
        "n_screened": len(rep.screening),
        "timings": rep.timings,
        "final_loglik": float(model.score(net)),
        "errors": errors,
    }
    p = os.path.join(output_dir, "report.json")
    with open(p, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return model, summary


# --- experiment sweep -------------------------------------------------------

def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_replicate(plan: ExperimentPlan, T: int, rep: int) -> list:
    """Generate, fit and evaluate one replicate; one row per requested stage."""
    base = {"case": plan.case, "family": plan.family, "n": plan.n, "k": plan.k, "T": T, "rep": rep}
    t0 = time.perf_counter()
    try:
        f, net = _simulated(plan, T, rep)
        model = SharedLatentSpaceModel(
            n_shared=plan.k, n_individual=plan.k, family=plan.family, M1=row_bound(f),
            eta=plan.eta, max_iter=plan.max_iter, anchors=plan.anchors,
            validate_support=not plan.noiseless,
        )
        model.fit(net.layers, stages=tuple(plan.stages))
    except (ScreeningError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        log.warning("T=%d rep=%d failed: %s", T, rep, exc)
        status = f"error: {type(exc).__name__}"
        return [dict(base, stage=s, dist2_Z=float("nan"), max_dist2_W=float("nan"),
                     gram_err_Z=float("nan"), seconds=0.0, status=status) for s in plan.stages]
    rows = []
    elapsed = 0.0
    for stage in plan.stages:
        rec = evaluate(model.report_.stages[stage], f, stage)
        elapsed += model.report_.timings.get(stage, 0.0)
        if stage == "hunt":
            elapsed += model.report_.timings["individual"]
        rows.append(dict(base, stage=stage, dist2_Z=rec.dist2_Z, max_dist2_W=rec.max_dist2_W,
                         gram_err_Z=rec.gram_err_Z, seconds=elapsed if plan.timing else 0.0,
                         status="ok"))
    log.debug("T=%d rep=%d done in %.2fs", T, rep, time.perf_counter() - t0)
    return rows


def _run_task(args):
    plan, T, rep = args
    return run_replicate(plan, T, rep)


def n_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def summarize(rows) -> list:
    out = []
    keys = sorted({(r["T"], r["stage"]) for r in rows}, key=lambda x: (x[0], STAGES.index(x[1])))
    for T, stage in keys:
        ok = [r for r in rows if r["T"] == T and r["stage"] == stage and r["status"] == "ok"]
        g = np.array([r["gram_err_Z"] for r in ok])
        dz = np.array([r["dist2_Z"] for r in ok])
        dw = np.array([r["max_dist2_W"] for r in ok])
        first = rows[0]
        nan = float("nan")
        out.append({
            "case": first["case"], "family": first["family"], "n": first["n"], "k": first["k"],
            "T": T, "stage": stage, "n_ok": len(ok),
            "median_gram_err_Z": float(np.median(g)) if ok else nan,
            "q05_gram_err_Z": float(np.quantile(g, 0.05)) if ok else nan,
            "q95_gram_err_Z": float(np.quantile(g, 0.95)) if ok else nan,
            "median_dist2_Z": float(np.median(dz)) if ok else nan,
            "median_max_dist2_W": float(np.median(dw)) if ok else nan,
        })
    return out


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_gnuplot(output_dir, summary) -> list:
    """Write ``summary.dat`` (one block per stage) and a ``plot.gp`` script."""
    dat = os.path.join(output_dir, "summary.dat")
    stages = [s for s in STAGES if any(r["stage"] == s for r in summary)]
    with open(dat, "w") as fh:
        fh.write("# T median q05 q95  (gram_err_Z); one block per stage\n")
        for s in stages:
            fh.write(f"# stage {s}\n")
            for r in summary:
                if r["stage"] == s:
                    fh.write(f"{r['T']} {r['median_gram_err_Z']!r} {r['q05_gram_err_Z']!r} "
                             f"{r['q95_gram_err_Z']!r}\n")
            fh.write("\n\n")
    gp = os.path.join(output_dir, "plot.gp")
    with open(gp, "w") as fh:
        fh.write("set logscale xy\nset xlabel 'T'\nset ylabel 'gram error of Z'\n")
        fh.write("set terminal pngcairo\nset output 'summary.png'\nplot \\\n")
        parts = [f"  'summary.dat' index {i} using 1:2:3:4 with yerrorlines title '{s}'"
                 for i, s in enumerate(stages)]
        fh.write(", \\\n".join(parts) + "\n")
    return [dat, gp]


def run_experiment(plan: ExperimentPlan, workers: int | None = None):
    """Run the full sweep and write ``results.csv``, ``summary.csv`` and a manifest.

    Returns ``(rows, summary)``. Output is independent of the worker count.
    """
    os.makedirs(plan.output_dir, exist_ok=True)
    tasks = [(plan, T, rep) for T in plan.T_list for rep in range(plan.replicates)]
    workers = n_workers() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r["T"], r["rep"], STAGES.index(r["stage"])))
    summary = summarize(rows)
    res = os.path.join(plan.output_dir, "results.csv")
    summ = os.path.join(plan.output_dir, "summary.csv")
    _write_csv(res, RESULT_COLUMNS, rows)
    _write_csv(summ, SUMMARY_COLUMNS, summary)
    files = [res, summ] + write_gnuplot(plan.output_dir, summary)
    write_manifest(plan.output_dir, asdict(plan), files)
    return rows, summary


def loglog_slope(Ts, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(Ts)``."""
    return float(np.polyfit(np.log(np.asarray(Ts, float)), np.log(np.asarray(values, float)), 1)[0])
