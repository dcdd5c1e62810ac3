"""Monte Carlo experiment runner behind the command line.

Every trial gets its own Philox substream keyed by ``(seed, ..., trial, attempt)``
so results do not depend on thread count or scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace

import numpy as np

from . import __version__
from .estimator import classify_sign, estimate_magnitude, predicted_misclassification
from .magnetometry import (
    EstimationError,
    FieldScenario,
    coherence_field_bound,
    field_to_phase,
    plan_scenario,
    primary_field_precision,
    run_field_measurement,
)
from .protocol import Flag, ProtocolParams, ProtocolTrace, resource_scaling, run_protocol
from .quantum_sim import Apparatus, EnsembleSpec, TruePhase, coherence_cap, effective_sigma, make_rng
from .stats_core import Tolerance, angle_mixture_from_szn, g_of_beta, shannon_entropy, wrapped_distance

__all__ = [
    "MODES",
    "CSV_COLUMNS",
    "ExperimentConfig",
    "ExperimentSummary",
    "RunOutcome",
    "aggregate",
    "run_experiment",
    "run_trial",
    "draw_truth",
    "write_outputs",
]

MODES = ("single_run", "coverage", "scaling", "misclassification", "dephasing", "magnetometry", "entropy_check")

CSV_COLUMNS = (
    "trial_id",
    "true_phi",
    "K",
    "final_phi_hat",
    "final_sigma",
    "abs_wrapped_error",
    "n_i",
    "R_total",
    "flags",
    "beta_prime_max",
    "n_probes",
    "attempts",
    "covered",
)

# streams reserved for drawing hidden phases, disjoint from apparatus streams
_TRUTH_STREAM = 2**32


@dataclass
class ExperimentConfig:
    mode: str
    trials: int
    spec: EnsembleSpec
    params: ProtocolParams
    scenario: FieldScenario | None = None
    output_path: str | None = None
    seed: int = 0
    threads: int = 1
    phi: float | None = None
    restarts: int = 10
    exclude: float = 0.15
    atoms_list: tuple[int, ...] = (100, 400, 1000)
    phis: tuple[float, ...] = (0.3, 0.8, 1.2)
    n_values: tuple[int, ...] = (1, 2, 5, 10)
    sigma1: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.restarts < 0:
            raise ValueError("restarts must be nonnegative")
        if self.mode == "magnetometry" and self.scenario is None:
            raise ValueError("magnetometry mode needs a scenario")


@dataclass
class ExperimentSummary:
    mode: str
    results: dict
    config: dict
    version: str = __version__
    wall_time_s: float = 0.0
    rows: list = field(default_factory=list, repr=False)
    columns: tuple = field(default=CSV_COLUMNS, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "version": self.version,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
            "results": self.results,
        }


@dataclass
class RunOutcome:
    trial_id: int
    truth: float
    trace: ProtocolTrace
    attempts: int


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n > 0 else math.nan


def draw_truth(seed: int, trial: int, exclude: float = 0.0, key: int = 0) -> float:
    """Uniform hidden phase avoiding ``exclude``-neighbourhoods of 0 and pi."""
    rng = make_rng(seed, _TRUTH_STREAM, key, trial)
    while True:
        phi = float(rng.uniform(-math.pi, math.pi))
        if abs(phi) >= exclude and math.pi - abs(phi) >= exclude:
            return phi


def run_trial(spec, truth, params, substream, restarts) -> tuple[ProtocolTrace, int]:
    """Run the protocol, rerunning on estimation errors up to ``restarts`` times."""
    for attempt in range(restarts + 1):
        trace = run_protocol(spec, TruePhase(truth), params, substream=(*substream, attempt))
        if not trace.estimation_error:
            break
    return trace, attempt + 1


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _outcomes(cfg, spec, params, key=0):
    def one(t):
        truth = cfg.phi if cfg.phi is not None else draw_truth(cfg.seed, t, cfg.exclude, key)
        trace, attempts = run_trial(spec, truth, params, (key, t), cfg.restarts)
        return RunOutcome(t, truth, trace, attempts)

    return _map(one, range(cfg.trials), cfg.threads)


def _is_covered(trace, truth, g):
    if trace.estimation_error:
        return False
    est = trace.estimate
    return bool(wrapped_distance(truth, est.phi_hat) <= g * est.sigma)


def _row(o: RunOutcome, g: float) -> dict:
    tr = o.trace
    est = tr.estimate
    return {
        "trial_id": o.trial_id,
        "true_phi": o.truth,
        "K": est.step_index,
        "final_phi_hat": est.phi_hat,
        "final_sigma": est.sigma,
        "abs_wrapped_error": float(wrapped_distance(o.truth, est.phi_hat)),
        "n_i": ";".join(str(n) for n in tr.rotations),
        "R_total": tr.resources.total,
        "flags": ";".join(sorted(f.value for f in tr.flags)),
        "beta_prime_max": tr.beta_prime_max,
        "n_probes": tr.n_probes,
        "attempts": o.attempts,
        "covered": int(_is_covered(tr, o.truth, g)),
    }


def aggregate(traces, truth, attempts=None, tol: Tolerance | None = None) -> dict:
    """Coverage, widths, error and flag rates over finished runs.

    ``attempts[i]`` counts how many protocol runs trial ``i`` needed; the
    extra ones were aborted on estimation errors. Covered, missed and failed
    (still aborted after the last attempt) trials partition the total.
    """
    if len(traces) != len(truth):
        raise ValueError("traces and truths differ in length")
    n = len(traces)
    attempts = [1] * n if attempts is None else list(attempts)
    tol = traces[0].params.tol if tol is None and n else tol
    g = g_of_beta(tol.beta)
    truths = [t.phi if isinstance(t, TruePhase) else float(t) for t in truth]

    covered = missed = failed = ambiguous = high_risk = 0
    errors, sigmas, nominal, targets = [], [], [], []
    for tr, phi in zip(traces, truths):
        flags = tr.flags
        ambiguous += Flag.AMBIGUOUS in flags
        high_risk += Flag.HIGH_RISK_SIGN in flags
        if tr.estimation_error:
            failed += 1
            continue
        est = tr.estimate
        err = float(wrapped_distance(phi, est.phi_hat))
        errors.append(err)
        sigmas.append(est.sigma)
        nominal.append(tr.sigma_nominal)
        targets.append(est.confidence)
        if err <= g * est.sigma:
            covered += 1
        else:
            missed += 1
    total_attempts = sum(attempts)
    aborted = total_attempts - (n - failed)
    completed = covered + missed
    cov = covered / n if n else math.nan
    cov_c = covered / completed if completed else math.nan
    errs = np.asarray(errors)
    return {
        "trials": n,
        "covered": covered,
        "missed": missed,
        "failed": failed,
        "coverage": cov,
        "coverage_stderr": _stderr(cov, n),
        "coverage_completed": cov_c,
        "coverage_completed_stderr": _stderr(cov_c, completed),
        "target_confidence": float(np.mean(targets)) if targets else math.nan,
        "attempts": total_attempts,
        "restart_rate": aborted / total_attempts if total_attempts else 0.0,
        "ambiguous_rate": ambiguous / n if n else 0.0,
        "high_risk_rate": high_risk / n if n else 0.0,
        "mean_sigma": float(np.mean(sigmas)) if sigmas else math.nan,
        "mean_sigma_nominal": float(np.mean(nominal)) if nominal else math.nan,
        "rms_error": float(np.sqrt(np.mean(errs**2))) if errs.size else math.nan,
        "median_abs_error": float(np.median(errs)) if errs.size else math.nan,
        "robust_sigma": float(1.4826 * np.median(errs)) if errs.size else math.nan,
    }


def _protocol_mode(cfg: ExperimentConfig):
    g = g_of_beta(cfg.params.tol.beta)
    outs = _outcomes(cfg, cfg.spec, cfg.params)
    res = aggregate([o.trace for o in outs], [o.truth for o in outs], [o.attempts for o in outs], cfg.params.tol)
    target = res["target_confidence"]
    res["coverage_ok"] = bool(res["coverage_completed"] >= target - 3 * res["coverage_completed_stderr"])
    return res, [_row(o, g) for o in outs], CSV_COLUMNS


def _scaling_mode(cfg: ExperimentConfig):
    tol = cfg.params.tol
    g = g_of_beta(tol.beta)
    table, rows = [], []
    for K in range(1, cfg.params.max_steps + 1):
        params = ProtocolParams(tol, K, n_cap=cfg.params.n_cap)
        for N in cfg.atoms_list:
            spec = EnsembleSpec(N, N, cfg.spec.epsilon, cfg.seed)
            outs = _outcomes(cfg, spec, params, key=K * 1_000_003 + N)
            agg = aggregate([o.trace for o in outs], [o.truth for o in outs], [o.attempts for o in outs], tol)
            done = [o.trace for o in outs if not o.trace.estimation_error]
            pred = resource_scaling(params, N)
            table.append(
                {
                    "K": K,
                    "N": N,
                    "R": float(np.mean([t.resources.total for t in done])),
                    "delta_empirical": g * agg["robust_sigma"],
                    "delta_nominal": g * float(np.mean([t.sigma_nominal for t in done])),
                    "delta_predicted": pred.delta_K,
                    "R_predicted": pred.R_total,
                    "R_K_predicted": pred.R_K,
                    "coverage_completed": agg["coverage_completed"],
                    "restart_rate": agg["restart_rate"],
                }
            )
            rows.extend(_row(o, g) for o in outs)
    slopes = {}
    for K in range(1, cfg.params.max_steps + 1):
        sub = [r for r in table if r["K"] == K]
        if len(sub) >= 2:
            x = np.log([r["R"] for r in sub])
            slopes[str(K)] = {
                "empirical": float(np.polyfit(x, np.log([r["delta_empirical"] for r in sub]), 1)[0]),
                "nominal": float(np.polyfit(x, np.log([r["delta_nominal"] for r in sub]), 1)[0]),
                "ideal": -K / (K + 1),
            }
    return {"table": table, "slopes": slopes}, rows, CSV_COLUMNS


def _misclassification_mode(cfg: ExperimentConfig):
    spec, tol = cfg.spec, cfg.params.tol
    cols = ("trial_id", "true_phi", "phi_tilde", "alpha", "sign_error", "beta_prime")
    per_phi, rows = [], []
    for j, phi in enumerate(cfg.phis):
        truth = TruePhase(phi)

        def one(t, j=j, truth=truth):
            app = Apparatus(spec, substream=(j, t))
            rec = app.sample_primary(truth, 1)
            mag = estimate_magnitude(rec, spec.epsilon)
            comp = app.sample_complementary(truth, 1)
            sg = classify_sign(comp, mag.phi_tilde, spec.n_probes, spec.n_probes_comp, contrast=spec.epsilon, beta_tilde=tol.beta_tilde)
            true_sign = 1 if truth.phi >= 0 else -1
            return (t, truth.phi, mag.phi_tilde, sg.alpha, int(sg.alpha != true_sign), sg.beta_prime)

        out = _map(one, range(cfg.trials), cfg.threads)
        errors = sum(r[4] for r in out)
        rate = errors / cfg.trials
        predicted = predicted_misclassification(abs(truth.phi), spec.n_probes_comp, spec.epsilon)
        se = _stderr(predicted, cfg.trials)
        per_phi.append(
            {
                "phi": truth.phi,
                "trials": cfg.trials,
                "errors": errors,
                "rate": rate,
                "rate_stderr": _stderr(rate, cfg.trials),
                "predicted": predicted,
                "predicted_mean_over_runs": float(np.mean([r[5] for r in out])),
                "within_3se": bool(abs(rate - predicted) <= 3 * se + 1e-15),
            }
        )
        rows.extend(dict(zip(cols, r)) for r in out)
    return {"per_phi": per_phi}, rows, cols


def _dephasing_mode(cfg: ExperimentConfig):
    spec = cfg.spec
    N, eps = spec.n_probes, spec.epsilon
    n_c = coherence_cap(eps)
    top = int(max(10, math.ceil(3 * n_c))) if math.isfinite(n_c) else 1000
    ns = np.arange(1, top + 1)
    widths = np.array([effective_sigma(N, int(n), eps) for n in ns])
    best = int(ns[np.argmin(widths)])
    sigma1 = 1.0 / math.sqrt(N)
    floor_width = sigma1 * math.e * math.log(1.0 / eps) if eps < 1 else 0.0
    if cfg.params.n_cap is None and math.isfinite(n_c):
        # beyond n_c the contrast loss outweighs the extra rotations
        cfg = replace(cfg, params=replace(cfg.params, n_cap=max(1, math.floor(n_c))))
    res, rows, cols = _protocol_mode(cfg)
    res.update(
        {
            "n_cap": cfg.params.n_cap,
            "epsilon": eps,
            "n_c": n_c,
            "n_best": best,
            "sigma_min": float(widths.min()),
            "sigma_min_predicted": floor_width,
            "sigma_min_ratio": float(widths.min() / floor_width) if floor_width else math.nan,
        }
    )
    return res, rows, cols


def _magnetometry_mode(cfg: ExperimentConfig):
    sc, tol = cfg.scenario, cfg.params.tol
    plan = plan_scenario(sc, tol, cfg.params.max_steps)
    g = g_of_beta(tol.beta)
    cols = ("trial_id", "hidden_b", "b_hat", "delta_b", "abs_error", "steps_used", "n_i", "attempts", "covered")

    def one(t):
        rng = make_rng(cfg.seed, _TRUTH_STREAM, 7, t)
        while True:
            b = float(rng.uniform(sc.b_minus, sc.b_plus))
            phi = field_to_phase(b, sc, 1, plan.offset_b0)
            if abs(phi) >= cfg.exclude and math.pi - abs(phi) >= cfg.exclude:
                break
        try:
            fe = run_field_measurement(sc, b, tol, max_steps=cfg.params.max_steps, seed=cfg.seed, substream=(t,), restarts=cfg.restarts)
        except EstimationError:
            return (t, b, math.nan, math.nan, math.nan, 0, "", cfg.restarts + 1, 0)
        err = abs(fe.b_hat - b)
        rot = ";".join(map(str, fe.trace.rotations))
        return (t, b, fe.b_hat, fe.delta_b, err, fe.steps_used, rot, fe.attempts, int(err <= g * fe.delta_b))

    out = _map(one, range(cfg.trials), cfg.threads)
    ok = [r for r in out if not math.isnan(r[3])]
    db = np.array([r[3] for r in ok])
    res = {
        "offset_b0": plan.offset_b0,
        "turns": plan.turns,
        "steps_planned": plan.params.max_steps,
        "n_cap": plan.params.n_cap,
        "epsilon": plan.epsilon,
        "mean_delta_b": float(db.mean()) if db.size else math.nan,
        "delta_b_primary": primary_field_precision(sc),
        "delta_b_coherence_bound": coherence_field_bound(sc),
        "coverage": sum(r[8] for r in out) / cfg.trials,
        "failed": cfg.trials - len(ok),
    }
    return res, [dict(zip(cols, r)) for r in out], cols


def _entropy_mode(cfg: ExperimentConfig):
    sigma1 = cfg.sigma1 if cfg.sigma1 is not None else 1.0 / math.sqrt(cfg.spec.n_probes)
    cols = ("n", "sigma_n", "entropy", "delta_vs_n1", "overlapping")
    rows, base = [], None
    for n in cfg.n_values:
        mix = angle_mixture_from_szn(math.cos(0.7), n, cfg.spec.n_probes, sigma=sigma1 / n)
        H, overlap = shannon_entropy(mix)
        rows.append({"n": n, "sigma_n": sigma1 / n, "entropy": H, "delta_vs_n1": 0.0, "overlapping": int(overlap)})
    base = math.log(sigma1 * math.sqrt(2 * math.pi * math.e))
    for r in rows:
        r["delta_vs_n1"] = r["entropy"] - base
    res = {
        "sigma1": sigma1,
        "single_peak_entropy": base,
        "max_abs_delta": max(abs(r["delta_vs_n1"]) for r in rows),
        "table": rows,
    }
    return res, rows, cols


_RUNNERS = {
    "single_run": _protocol_mode,
    "coverage": _protocol_mode,
    "scaling": _scaling_mode,
    "misclassification": _misclassification_mode,
    "dephasing": _dephasing_mode,
    "magnetometry": _magnetometry_mode,
    "entropy_check": _entropy_mode,
}


def _jsonable(obj):
    if is_dataclass(obj):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def run_experiment(cfg: ExperimentConfig) -> ExperimentSummary:
    """Execute ``cfg`` and, if ``output_path`` is set, write ``<out>.csv`` and ``<out>.summary.json``."""
    t0 = time.perf_counter()
    results, rows, cols = _RUNNERS[cfg.mode](cfg)
    summary = ExperimentSummary(
        mode=cfg.mode,
        results=_jsonable(results),
        config=_jsonable(cfg),
        wall_time_s=time.perf_counter() - t0,
        rows=rows,
        columns=tuple(cols),
    )
    if cfg.output_path:
        write_outputs(summary, cfg.output_path)
    return summary


def csv_text(summary: ExperimentSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(summary.columns)
    for row in summary.rows:
        w.writerow([_fmt(row[c]) for c in summary.columns])
    return buf.getvalue()


def write_outputs(summary: ExperimentSummary, out: str) -> tuple[str, str]:
    csv_path, json_path = f"{out}.csv", f"{out}.summary.json"
    with open(csv_path, "w", newline="") as fh:
        fh.write(csv_text(summary))
    with open(json_path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path
