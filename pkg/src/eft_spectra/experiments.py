"""Config-driven experiment runners.

Each mode reads one JSON config, writes CSV/JSON files atomically into the
output directory and returns an :class:`ExperimentReport`.
"""
from __future__ import annotations

import io
import csv
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import ConfigError, EftError
from .hamrep import (
    BlissParams,
    bliss_transform,
    df_norm_shift,
    double_factorize,
    load_integrals,
    load_thc,
    one_body_eigs,
    pauli_norm_shift,
    thc_from_df,
    thc_norm_shift,
)
from .numerics import RngStream
from .qksd import (
    KrylovConfig,
    Policy,
    _TrialSetup,
    allocate_shots,
    find_shot_budget,
    inject_noise,
    overlap_analysis,
)
from .spe import (
    acdf_value,
    exact_cdf,
    execute_plan,
    measured_truncation_error,
    plan_spe,
    truncation_bound_new,
    truncation_bound_old,
)
from .spectrum import Spectrum, load_spectrum, moment_table, qpe_backenvelope, synth_exponential, write_atomic

MODES = ("qksd-sweep", "qksd-budget", "spe-run", "spe-bound-curve", "overlap-analysis", "norms", "compare",
         "acdf-curve")
STOCHASTIC = {"qksd-sweep", "qksd-budget", "spe-run", "compare"}
REPRESENTATIONS = ("pauli", "df", "thc", "thc-bliss")

# mode -> required keys (besides a spectrum source where relevant)
_REQUIRED = {
    "qksd-sweep": ("K", "m_total"),
    "qksd-budget": ("K",),
    "spe-run": (),
    "spe-bound-curve": ("beta", "K"),
    "overlap-analysis": ("K", "dk"),
    "norms": ("integrals_path",),
    "compare": ("K",),
    "acdf-curve": (),
}
_NEEDS_SPECTRUM = {"qksd-sweep", "qksd-budget", "spe-run", "overlap-analysis", "compare", "acdf-curve"}

QKSD_COLUMNS = ("K", "dk", "policy", "m_total", "mean_abs_err", "rmse", "s1", "s2", "s3", "failed_trials")


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def _is_int_list(v) -> bool:
    return isinstance(v, list) and bool(v) and all(isinstance(x, int) and not isinstance(x, bool) and x >= 1
                                                  for x in v)


def _is_num_list(v) -> bool:
    return isinstance(v, list) and bool(v) and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                                  for x in v)


def validate(config: Any) -> list[str]:
    """Return every schema violation found in ``config`` (empty when valid)."""
    if not isinstance(config, dict):
        return ["config must be a JSON object"]
    out: list[str] = []
    mode = config.get("mode")
    if mode not in MODES:
        return [f"mode {mode!r} is not one of: {', '.join(MODES)}"]
    for key in _REQUIRED[mode]:
        if key not in config:
            out.append(f"missing required field '{key}' for mode {mode}")
    if mode in STOCHASTIC or (mode == "acdf-curve" and config.get("noisy")):
        seed = config.get("seed")
        if seed is None:
            out.append(f"missing required field 'seed' for stochastic mode {mode}")
        elif not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
            out.append("seed must be an integer in [0, 2^64)")
    if mode in _NEEDS_SPECTRUM:
        has_path, has_syn = "spectrum_path" in config, "synthesis" in config
        if has_path == has_syn:
            out.append("exactly one of 'spectrum_path' or 'synthesis' is required")
        elif has_syn:
            out.extend(_validate_synthesis(config["synthesis"]))
        elif not isinstance(config["spectrum_path"], str):
            out.append("spectrum_path must be a string")
    for key in ("K", "dk", "m_total"):
        if key in config and not _is_int_list(config[key]):
            out.append(f"'{key}' must be a non-empty list of positive integers")
    if "beta" in config and not (_is_num_list(config["beta"]) and min(config["beta"]) > 0):
        out.append("'beta' must be a non-empty list of positive numbers")
    if "policy" in config:
        pols = config["policy"] if isinstance(config["policy"], list) else [config["policy"]]
        for p in pols:
            try:
                Policy.parse(p)
            except (EftError, ValueError, TypeError):
                out.append(f"cannot parse policy {p!r}")
    for key, lo in (("target_err", 0.0), ("delta_target", 0.0)):
        if key in config:
            v = config[key]
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > lo:
                out.append(f"'{key}' must be a positive number")
    if "p_success" in config:
        v = config["p_success"]
        if not isinstance(v, (int, float)) or not 0 < v < 1:
            out.append("'p_success' must lie in (0, 1)")
    for key in ("n_trials", "n_runs", "n_points", "n_grid", "spe_runs"):
        if key in config:
            v = config[key]
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if key == "spe_runs" else 1):
                out.append(f"'{key}' must be a positive integer")
    if mode == "norms":
        reps = config.get("representations", list(REPRESENTATIONS))
        if not isinstance(reps, list) or any(r not in REPRESENTATIONS for r in reps):
            out.append(f"'representations' entries must be among: {', '.join(REPRESENTATIONS)}")
    if "output_dir" in config and not isinstance(config["output_dir"], str):
        out.append("output_dir must be a string")
    return out


def _validate_synthesis(syn) -> list[str]:
    if not isinstance(syn, dict):
        return ["synthesis must be an object"]
    out = []
    if "energies" in syn:
        for k in ("p0", "alpha", "shift", "scale"):
            if not isinstance(syn.get(k), (int, float)):
                out.append(f"synthesis.{k} must be a number")
        if not _is_num_list(syn["energies"]):
            out.append("synthesis.energies must be a list of numbers")
    elif "values" in syn:
        if not (_is_num_list(syn["values"]) and _is_num_list(syn.get("weights"))
                and len(syn["values"]) == len(syn["weights"])):
            out.append("synthesis.values and synthesis.weights must be equal-length number lists")
    else:
        out.append("synthesis needs 'energies' (exponential model) or 'values'/'weights'")
    return out


def load_config(path) -> dict:
    """Read a JSON config; raises :class:`ConfigError` listing violations."""
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc
    problems = validate(config)
    if problems:
        raise ConfigError(problems)
    return config


def spectrum_from_config(config: dict, base: Path | None = None) -> Spectrum:
    if "spectrum_path" in config:
        p = Path(config["spectrum_path"])
        if base is not None and not p.is_absolute():
            p = base / p
        return load_spectrum(p)
    syn = config["synthesis"]
    if "energies" in syn:
        return synth_exponential(syn["energies"], syn["p0"], syn["alpha"], syn["shift"], syn["scale"],
                                 syn.get("label", ""))
    return Spectrum.from_pairs(syn["values"], syn["weights"], syn.get("shift", 0.0), syn.get("scale", 1.0),
                               syn.get("label", ""), renormalize=True)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    mode: str
    config: dict
    records: list[dict]
    summary: dict = field(default_factory=dict)
    files: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {"mode": self.mode, "config": self.config, "summary": self.summary, "records": self.records,
                "files": self.files, "provenance": self.provenance}
        return json.dumps(_jsonable(body), indent=2, sort_keys=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _provenance() -> dict:
    return {
        "package": "eft_spectra",
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


# ---------------------------------------------------------------------------
# worker pool
# ---------------------------------------------------------------------------


def _map(fn: Callable, items: list, jobs: int) -> list:
    # results come back in input order regardless of scheduling
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _policies(config: dict) -> list[Policy]:
    pol = config.get("policy", "threshold=1e-8")
    return [Policy.parse(p) for p in (pol if isinstance(pol, list) else [pol])]


def _grid(config: dict) -> list[tuple[int, int, Policy]]:
    return [(k, dk, p) for p in _policies(config) for dk in config.get("dk", [1]) for k in config["K"]]


def _qksd_row(k, dk, policy, stats) -> dict:
    s = np.zeros(3)
    eig = np.asarray(stats.overlap_eigs)
    s[: min(3, eig.size)] = eig[:3]
    return {"K": k, "dk": dk, "policy": str(policy), "m_total": stats.m_total,
            "mean_abs_err": stats.mean_abs_err, "rmse": stats.rmse, "s1": s[0], "s2": s[1], "s3": s[2],
            "failed_trials": stats.failed_trials}


def _sweep_point(args):
    s, k, dk, policy, m_list, n_trials, seed = args
    setup = _TrialSetup(s, KrylovConfig(k, dk, policy), policy)
    rows = []
    for m in m_list:
        st = setup.run(m, n_trials, seed)
        rows.append({**_qksd_row(k, dk, policy, st), "reference": st.reference, "true_energy": st.true_energy,
                     "seed": seed, "streams": f"0..{n_trials - 1}"})
    alloc = allocate_shots(setup.gradient, m_list[-1])
    grad = [{"degree": d, "g_k": g, "M_k": alloc[d]} for d, g in zip(setup.gradient.degrees, setup.gradient.values)]
    return rows, grad


def _budget_point(args):
    s, k, dk, policy, target, n_trials, seed, m_cap = args
    res = find_shot_budget(s, KrylovConfig(k, dk, policy), policy, target, n_trials, seed, m_cap)
    row = {"K": k, "dk": dk, "policy": str(policy), "m_total": res.m_total, "mean_abs_err": math.nan,
           "rmse": math.nan, "s1": math.nan, "s2": math.nan, "s3": math.nan, "failed_trials": 0}
    if res.stats is not None:
        row.update(_qksd_row(k, dk, policy, res.stats))
    elif res.m_total == 0:
        # nothing sampled: every trial equals the noiseless solution
        sol = _TrialSetup(s, KrylovConfig(k, dk, policy), policy).solution
        eig = np.zeros(3)
        eig[: min(3, sol.overlap_eigs.size)] = sol.overlap_eigs[:3]
        row.update({"mean_abs_err": 0.0, "rmse": abs(sol.e0_phys - s.ground_energy), "s1": eig[0],
                    "s2": eig[1], "s3": eig[2]})
    row.update({"seed": seed, "streams": f"0..{n_trials - 1}", "history": [list(h) for h in res.history]})
    grad = []
    if res.stats is not None:
        setup = _TrialSetup(s, KrylovConfig(k, dk, policy), policy)
        grad = [{"degree": d, "g_k": g, "M_k": res.stats.allocation[d]}
                for d, g in zip(setup.gradient.degrees, setup.gradient.values)]
    return row, grad


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------


def _write(out: Path, name: str, text: str, files: list[str]) -> None:
    write_atomic(out / name, text)
    files.append(name)


def _mode_qksd_sweep(config, s, out, jobs, files):
    seed, n_trials = config["seed"], config.get("n_trials", 100)
    pts = [(s, k, dk, p, config["m_total"], n_trials, seed) for k, dk, p in _grid(config)]
    results = _map(_sweep_point, pts, jobs)
    rows = [r for rr, _ in results for r in rr]
    _write(out, "qksd_sweep.csv", csv_text(QKSD_COLUMNS, rows), files)
    for (k, dk, p), (_, grad) in zip(_grid(config), results):
        _write(out, f"gradient_K{k}_dk{dk}_{p}.csv", csv_text(("degree", "g_k", "M_k"), grad), files)
    return rows, {}


def _mode_qksd_budget(config, s, out, jobs, files):
    seed, n_trials = config["seed"], config.get("n_trials", 100)
    target = float(config.get("target_err", 1e-3))
    pts = [(s, k, dk, p, target, n_trials, seed, float(config.get("m_cap", 1e12))) for k, dk, p in _grid(config)]
    results = _map(_budget_point, pts, jobs)
    rows = [r for r, _ in results]
    _write(out, "qksd_budget.csv", csv_text(QKSD_COLUMNS, rows), files)
    for (k, dk, p), (_, grad) in zip(_grid(config), results):
        if grad:
            _write(out, f"gradient_K{k}_dk{dk}_{p}.csv", csv_text(("degree", "g_k", "M_k"), grad), files)
    return rows, {"target_err": target}


def _spe_plan(config, s):
    return plan_spe(s, float(config.get("delta_target", 1e-3)), float(config.get("p_success", 0.99)),
                    margin=float(config.get("margin", 1e-3)),
                    redraw_per_query=bool(config.get("redraw_per_query", False)))


def _mode_spe_run(config, s, out, jobs, files):
    plan = _spe_plan(config, s)
    seed, n_runs = config["seed"], config.get("n_runs", 1)
    rows = []
    for i in range(n_runs):
        r = execute_plan(plan, seed + i)
        rows.append({**r.report(), "error_hartree": r.error, "queries": r.queries, "seed": seed + i,
                     "stream": "0" if not plan.search.redraw_per_query else f"0..{r.queries - 1}"})
    cols = ("seed", "stream", "e0_hartree", "error_hartree", "x_star", "queries", "amplification_factor",
            "success")
    _write(out, "spe_runs.csv", csv_text(cols, rows), files)
    first = rows[0]
    summary = {k: first[k] for k in ("K", "M", "beta_erf", "eta", "delta_radians", "x_star", "e0_hartree",
                                     "amplification_factor", "success")}
    summary["success_rate"] = float(np.mean([r["success"] for r in rows]))
    summary["true_e0_hartree"] = plan.source_ground
    summary["shots_realized"] = int(sum(plan.allocation.values()))
    _write(out, "spe_run.json", json.dumps(_jsonable(summary), indent=2) + "\n", files)
    return rows, summary


def _mode_bound_curve(config, out, files):
    n_grid = config.get("n_grid", 100_001)
    rows = []
    for beta in config["beta"]:
        for K in config["K"]:
            rows.append({"beta": float(beta), "K": K, "bound_new": truncation_bound_new(beta, K),
                         "bound_old": truncation_bound_old(beta, K),
                         "measured": measured_truncation_error(beta, K, n_grid)})
    _write(out, "bound_curve.csv", csv_text(("beta", "K", "bound_new", "bound_old", "measured"), rows), files)
    return rows, {}


def _mode_overlap(config, s, out, files):
    res = overlap_analysis(s, config["K"], config["dk"])
    _write(out, "overlap.csv", csv_text(("K", "dk", "k_dim", "s1", "s2", "s3"), res.records), files)
    slopes = {str(dk): list(v) for dk, v in res.slopes.items()}
    return res.records, {"slopes": slopes, "weights": s.weights.tolist()}


def _mode_acdf(config, s, out, files):
    plan = _spe_plan(config, s)
    n = config.get("n_points", 2001)
    lo, hi = config.get("x_range", list(plan.search.interval))
    x = np.linspace(float(lo), float(hi), n)
    moments = plan.moments
    if config.get("noisy"):
        moments = inject_noise(plan.moments, plan.allocation, RngStream(config["seed"], 0))
    vals = acdf_value(plan.model, moments, x)
    exact = exact_cdf(plan.spectrum, x)
    rows = [{"x": a, "value": b} for a, b in zip(x.tolist(), np.atleast_1d(vals).tolist())]
    _write(out, "acdf.csv", csv_text(("x", "value"), rows), files)
    _write(out, "acdf_exact.csv",
           csv_text(("x", "value"), [{"x": a, "value": b} for a, b in zip(x.tolist(), exact.tolist())]), files)
    summary = {"K": plan.model.order, "beta_erf": plan.model.sharpness, "delta_radians": plan.delta,
               "epsilon": plan.epsilon, "level": plan.search.level, "noisy": bool(config.get("noisy", False))}
    return [], summary


def norms_report(integrals_path, representations=REPRESENTATIONS, n_df: int | None = None,
                 thc_path=None, bliss: BlissParams | None = None) -> list[dict]:
    """One-norm and shift per representation.

    DF uses ``n_df`` leaves (default ``5n``). THC factors come from
    ``thc_path`` when given, otherwise an exact THC rewrite of the DF factors
    is used. ``thc-bliss`` applies ``bliss`` (default: zero parameters at the
    file's electron count) before factorising.
    """
    t = load_integrals(integrals_path)
    n = t.n
    n_df = 5 * n if n_df is None else int(n_df)
    rows = []

    def thc_row(tt, label, factors=None):
        df = double_factorize(tt, n_df)
        fac = factors if factors is not None else thc_from_df(df)
        ns = thc_norm_shift(one_body_eigs(tt), fac, tt.e_nuc)
        resid = float(np.linalg.norm(fac.reconstruct() - tt.g))
        return {"representation": label, "lambda": ns.lambda_, "beta": ns.beta, "offset": ns.offset,
                "rank": fac.rank, "residual": resid}

    for rep in representations:
        if rep == "pauli":
            ns = pauli_norm_shift(t)
            rows.append({"representation": rep, "lambda": ns.lambda_, "beta": ns.beta, "offset": ns.offset,
                         "rank": 0, "residual": 0.0})
        elif rep == "df":
            f = double_factorize(t, n_df)
            ns = df_norm_shift(t, f)
            rows.append({"representation": rep, "lambda": ns.lambda_, "beta": ns.beta, "offset": ns.offset,
                         "rank": f.count, "residual": f.residual})
        elif rep == "thc":
            rows.append(thc_row(t, rep, load_thc(thc_path) if thc_path else None))
        elif rep == "thc-bliss":
            eta = t.nelec if t.nelec is not None else n
            p = bliss if bliss is not None else BlissParams.zero(n, eta)
            rows.append(thc_row(bliss_transform(t, p), rep))
        else:
            raise ConfigError([f"unknown representation {rep!r}"])
    return rows


def _mode_norms(config, out, files, base):
    path = Path(config["integrals_path"])
    if base is not None and not path.is_absolute():
        path = base / path
    thc_path = config.get("thc_path")
    if thc_path and base is not None and not Path(thc_path).is_absolute():
        thc_path = base / thc_path
    bliss = None
    if "bliss" in config:
        b = config["bliss"]
        n = len(b["beta_mat"]) if "beta_mat" in b else None
        bm = np.array(b.get("beta_mat", np.zeros((n or 0, n or 0))), dtype=float)
        bliss = BlissParams(float(b.get("alpha1", 0.0)), float(b.get("alpha2", 0.0)), bm, int(b["eta"]))
    rows = norms_report(path, config.get("representations", list(REPRESENTATIONS)), config.get("n_df"),
                        thc_path, bliss)
    _write(out, "norms.csv", csv_text(("representation", "lambda", "beta", "offset", "rank", "residual"), rows),
           files)
    return rows, {}


def compare(s: Spectrum, k_list, policy_list, target: float = 1e-3, p_success: float = 0.99, seed: int = 0,
            n_trials: int = 100, dk: int = 1, spe_runs: int = 0, jobs: int = 1) -> tuple[list[dict], dict]:
    """QKSD shot budgets per ``K'`` next to the SPE cost at matching certified accuracy.

    The SPE target is ``max(target, QKSD rmse at the largest K')``. ``spe_runs``
    seeded SPE runs validate the certified bound when positive.
    """
    pols = [p if isinstance(p, Policy) else Policy.parse(p) for p in policy_list]
    pts = [(s, k, dk, p, target, n_trials, seed, 1e12) for p in pols for k in k_list]
    results = _map(_budget_point, pts, jobs)
    rows = [r for r, _ in results]
    k_max = max(k_list)
    rmse_at_max = max((r["rmse"] for r in rows if r["K"] == k_max and math.isfinite(r["rmse"])), default=0.0)
    spe_target = max(target, rmse_at_max)
    plan = plan_spe(s, spe_target, p_success)
    summary = {"spe_target_hartree": spe_target, "spe_K": plan.model.order,
               "spe_max_degree": plan.model.max_degree, "spe_M": plan.m_total,
               "spe_shots_realized": int(sum(plan.allocation.values()))}
    if spe_runs:
        succ = [execute_plan(plan, seed + i).success for i in range(spe_runs)]
        summary["spe_success_rate"] = float(np.mean(succ))
        summary["spe_seeds"] = f"{seed}..{seed + spe_runs - 1}"
    out = []
    for r in rows:
        cfg = KrylovConfig(r["K"], r["dk"])
        qpe = qpe_backenvelope(cfg.max_degree, max(1, int(r["m_total"])), s.p0) * s.scale
        out.append({"K": r["K"], "dk": r["dk"], "policy": r["policy"], "qksd_max_degree": cfg.max_degree,
                    "qksd_M": r["m_total"], "qksd_rmse": r["rmse"], "qksd_mean_abs_err": r["mean_abs_err"],
                    "spe_K": plan.model.order, "spe_max_degree": plan.model.max_degree, "spe_M": plan.m_total,
                    "spe_certified_err": spe_target, "qpe_err_hartree": qpe, "seed": seed})
    return out, summary


COMPARE_COLUMNS = ("K", "dk", "policy", "qksd_max_degree", "qksd_M", "qksd_rmse", "qksd_mean_abs_err", "spe_K",
                   "spe_max_degree", "spe_M", "spe_certified_err", "qpe_err_hartree")


def _mode_compare(config, s, out, jobs, files):
    pol = config.get("policy", "threshold=1e-8")
    rows, summary = compare(s, config["K"], pol if isinstance(pol, list) else [pol],
                            float(config.get("target_err", 1e-3)), float(config.get("p_success", 0.99)),
                            config["seed"], config.get("n_trials", 100), config.get("dk", [1])[0],
                            config.get("spe_runs", 0), jobs)
    _write(out, "compare.csv", csv_text(COMPARE_COLUMNS, rows), files)
    return rows, summary


def run(config: dict, out_dir=None, seed: int | None = None, jobs: int = 1, base: Path | None = None
        ) -> ExperimentReport:
    """Validate ``config``, run its mode, write outputs and ``report.json``.

    ``out_dir`` and ``seed`` override the config's ``output_dir`` and ``seed``;
    the echoed config records the effective values.
    """
    config = dict(config)
    if seed is not None:
        config["seed"] = int(seed)
    if out_dir is not None:
        config["output_dir"] = str(out_dir)
    problems = validate(config)
    if problems:
        raise ConfigError(problems)
    out = Path(config.get("output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    mode = config["mode"]
    files: list[str] = []
    s = spectrum_from_config(config, base) if mode in _NEEDS_SPECTRUM else None
    try:
        if mode == "qksd-sweep":
            rows, summary = _mode_qksd_sweep(config, s, out, jobs, files)
        elif mode == "qksd-budget":
            rows, summary = _mode_qksd_budget(config, s, out, jobs, files)
        elif mode == "spe-run":
            rows, summary = _mode_spe_run(config, s, out, jobs, files)
        elif mode == "spe-bound-curve":
            rows, summary = _mode_bound_curve(config, out, files)
        elif mode == "overlap-analysis":
            rows, summary = _mode_overlap(config, s, out, files)
        elif mode == "norms":
            rows, summary = _mode_norms(config, out, files, base)
        elif mode == "compare":
            rows, summary = _mode_compare(config, s, out, jobs, files)
        else:
            rows, summary = _mode_acdf(config, s, out, files)
    except EftError as exc:
        exc.args = (f"mode {mode}: {exc}",)
        raise
    report = ExperimentReport(mode, config, rows, summary, files + ["report.json"], _provenance())
    write_atomic(out / "report.json", report.to_json())
    return report
