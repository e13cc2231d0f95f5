"""Metrics and experiment orchestration.

Evaluation is one-step-ahead with teacher forcing: at each test
timestamp the true (normalized) history feeds the network, and the
denormalized prediction is scored against the raw ground truth. Reported
RMSE is always in raw flow units; the headline number is the mean of the
inflow and outflow RMSEs.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from .data import SERVICE_CHANNELS, denormalize_values
from .errors import DataError
from .matching import match_auxiliary, match_service
from .network import predict
from .synthgen import generate, matching_recovery
from .tensor import Tensor
from .transfer import (finetune, pretrain_source, regiontrans_train,
                       stacked_frames, train_target_only)

METHODS = ("target-only", "finetune", "regiontrans-smatch",
           "regiontrans-amatch")


def rmse(pred, truth):
    """Root mean square error over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DataError(f"rmse: shape mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise DataError("rmse: empty input")
    d = pred - truth
    return float(np.sqrt(np.mean(d * d)))


def avg_flow_rmse(per_channel):
    """Mean of the inflow and outflow RMSEs."""
    for ch in SERVICE_CHANNELS:
        if ch not in per_channel:
            raise DataError(f"avg_flow_rmse: missing channel '{ch}'")
    return 0.5 * (per_channel["inflow"] + per_channel["outflow"])


@dataclass
class EvalResult:
    scenario: str
    method: str
    seed: int
    history: int                # target training frames (1-day=24, 3-day=72)
    w: float
    rmse_inflow: float
    rmse_outflow: float
    rmse_avg: float
    runtime: float = 0.0

    CSV_HEADER = "scenario,method,seed,history,w,rmse_inflow,rmse_outflow," \
        "rmse_avg,runtime"

    def csv_row(self):
        return (f"{self.scenario},{self.method},{self.seed},{self.history},"
                f"{self.w!r},{self.rmse_inflow!r},{self.rmse_outflow!r},"
                f"{self.rmse_avg!r},{self.runtime:.3f}")


def evaluate_params(params, dataset, stats, config, t_eval_start,
                    t_eval_count=None):
    """Per-channel RMSE of one-step predictions over a held-out window.

    ``dataset`` carries the full series (history + continuation); the
    network sees normalized true history ending right before each
    predicted frame.
    """
    frames = stacked_frames(dataset, stats)  # [T, W, H, C], normalized
    order = [ch for ch in SERVICE_CHANNELS if ch in dataset.service]
    a0 = t_eval_start - dataset.t_start
    if t_eval_count is None:
        t_eval_count = dataset.t_count - a0
    if a0 < config.k:
        raise DataError(f"not enough history before evaluation window "
                        f"(need {config.k} frames, have {a0})")
    sq_err = {ch: [] for ch in order}
    for a in range(a0, a0 + t_eval_count):
        xs = [Tensor(frames[a - config.k + s]) for s in range(config.k)]
        ext = dataset.ext[a - 1] if dataset.ext is not None else np.zeros(0)
        pred = predict(xs, ext, params).data  # [W, H, C], normalized
        for c, ch in enumerate(order):
            raw_pred = denormalize_values(pred[..., c], stats, ch)
            raw_truth = dataset.service[ch].frames[a]
            d = raw_pred - raw_truth
            sq_err[ch].append(d * d)
    return {ch: float(np.sqrt(np.mean(sq_err[ch]))) for ch in order}


def build_matching(mode, target_train, source):
    if mode == "service":
        return match_service(target_train, source)
    if mode == "aux":
        return match_auxiliary(target_train, source)
    raise DataError(f"unknown matching mode '{mode}'")


def _train_method(method, pretrained, target_train, source, config, stats):
    if method == "target-only":
        params, _ = train_target_only(target_train, config, stats)
    elif method == "finetune":
        params, _ = finetune(pretrained, target_train, config, stats)
    elif method in ("regiontrans-smatch", "regiontrans-amatch"):
        mode = "service" if method.endswith("smatch") else "aux"
        matching = build_matching(mode, target_train, source)
        params, _ = regiontrans_train(pretrained, target_train, source,
                                      matching, config, stats)
    else:
        raise DataError(f"unknown method '{method}'; known: "
                        f"{', '.join(METHODS)}")
    return params


def run_experiment(spec, methods, seeds, config, progress=None):
    """Generate, pretrain, train each method, and score on the test window.

    One pretraining run per seed is shared by all methods that need it.
    Returns one EvalResult per (seed, method).
    """
    if not methods:
        raise DataError("run_experiment: no methods requested")
    for m in methods:
        if m not in METHODS:
            raise DataError(f"unknown method '{m}'; known: "
                            f"{', '.join(METHODS)}")
    results = []
    for seed in seeds:
        run_spec = replace(spec, seed=seed)
        source, target_full, _truth = generate(run_spec)
        stats = source.stats  # source extrema normalize both cities
        target_train = target_full.sliced(0, run_spec.t_target)
        cfg = replace(config, seed=seed, ext_len=run_spec.ext_len)
        pretrained = None
        if any(m != "target-only" for m in methods):
            pretrained, _ = pretrain_source(source, cfg, stats)
        for method in methods:
            t0 = time.perf_counter()
            params = _train_method(method, pretrained, target_train, source,
                                   cfg, stats)
            per_ch = evaluate_params(params, target_full, stats, cfg,
                                     run_spec.t_target, run_spec.test_len)
            results.append(EvalResult(
                scenario=run_spec.name, method=method, seed=seed,
                history=run_spec.t_target, w=cfg.w,
                rmse_inflow=per_ch["inflow"],
                rmse_outflow=per_ch["outflow"],
                rmse_avg=avg_flow_rmse(per_ch),
                runtime=time.perf_counter() - t0))
            if progress:
                progress(results[-1])
    return results


def run_w_sweep(spec, ws, seeds, config, progress=None):
    """Transfer runs across trade-off weights; method tag carries the w."""
    results = []
    for seed in seeds:
        run_spec = replace(spec, seed=seed)
        source, target_full, _truth = generate(run_spec)
        stats = source.stats
        target_train = target_full.sliced(0, run_spec.t_target)
        cfg = replace(config, seed=seed, ext_len=run_spec.ext_len)
        pretrained, _ = pretrain_source(source, cfg, stats)
        matching = match_service(target_train, source)
        for w in ws:
            t0 = time.perf_counter()
            wcfg = replace(cfg, w=float(w))
            if w == 0.0:
                params, _ = finetune(pretrained, target_train, wcfg, stats)
            else:
                params, _ = regiontrans_train(pretrained, target_train,
                                              source, matching, wcfg, stats)
            per_ch = evaluate_params(params, target_full, stats, wcfg,
                                     run_spec.t_target, run_spec.test_len)
            results.append(EvalResult(
                scenario=run_spec.name, method=f"w={w}", seed=seed,
                history=run_spec.t_target, w=float(w),
                rmse_inflow=per_ch["inflow"],
                rmse_outflow=per_ch["outflow"],
                rmse_avg=avg_flow_rmse(per_ch),
                runtime=time.perf_counter() - t0))
            if progress:
                progress(results[-1])
    return results


def score_matching_recovery(spec, seeds, mode="aux"):
    """Mean archetype-recovery fraction of the matcher across seeds."""
    fractions = []
    for seed in seeds:
        run_spec = replace(spec, seed=seed)
        source, target_full, truth = generate(run_spec)
        target_train = target_full.sliced(0, run_spec.t_target)
        matching = build_matching(mode, target_train, source)
        fractions.append(matching_recovery(matching, truth["target"],
                                           truth["source"]))
    return float(np.mean(fractions))


# ---- result files -------------------------------------------------------

def save_results(results, path):
    with open(path, "w") as f:
        f.write(EvalResult.CSV_HEADER + "\n")
        for r in results:
            f.write(r.csv_row() + "\n")


def load_results(path):
    results = []
    try:
        with open(path) as f:
            lines = f.readlines()
    except FileNotFoundError:
        raise DataError(f"{path}: results file not found") from None
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise DataError(f"{path}: malformed results row {line!r}")
        results.append(EvalResult(
            scenario=parts[0], method=parts[1], seed=int(parts[2]),
            history=int(parts[3]), w=float(parts[4]),
            rmse_inflow=float(parts[5]), rmse_outflow=float(parts[6]),
            rmse_avg=float(parts[7]), runtime=float(parts[8])))
    return results


def mean_rmse(results, **filters):
    rows = [r for r in results
            if all(getattr(r, k) == v for k, v in filters.items())]
    if not rows:
        raise DataError(f"no results match {filters}")
    return float(np.mean([r.rmse_avg for r in rows]))


def emit_plot_data(results, outdir):
    """Aggregate result rows into the table / w-sweep analog CSVs."""
    if not results:
        raise DataError("emit_plot_data: no results")
    outdir.mkdir(parents=True, exist_ok=True)
    save_results(results, outdir / "results.csv")
    table_rows = [r for r in results if not r.method.startswith("w=")]
    sweep_rows = [r for r in results if r.method.startswith("w=")]
    written = []
    if table_rows:
        keys = sorted({(r.scenario, r.method, r.history) for r in table_rows})
        path = outdir / "table_methods.csv"
        with open(path, "w") as f:
            f.write("scenario,method,history,mean_rmse,n_seeds\n")
            for scenario, method, history in keys:
                vals = [r.rmse_avg for r in table_rows
                        if (r.scenario, r.method, r.history) ==
                        (scenario, method, history)]
                f.write(f"{scenario},{method},{history},"
                        f"{float(np.mean(vals))!r},{len(vals)}\n")
        written.append(path)
    if sweep_rows:
        keys = sorted({(r.w, r.history) for r in sweep_rows})
        path = outdir / "w_sweep.csv"
        with open(path, "w") as f:
            f.write("w,history,mean_rmse,n_seeds\n")
            for w, history in keys:
                vals = [r.rmse_avg for r in sweep_rows
                        if (r.w, r.history) == (w, history)]
                f.write(f"{w!r},{history},{float(np.mean(vals))!r},"
                        f"{len(vals)}\n")
        written.append(path)
    return written
