"""The experiment types: model comparison, amortization comparison, architecture study, oracle check."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from ..estimators import cvnmc_lower, nmc, posterior_bound, vnmc_upper
from ..flow.checkpoint import load_checkpoint
from ..flow.config import EncoderConfig, FlowConfig
from ..flow.posterior import AmortizedPosterior
from ..models import GlmModel, sample_designs
from ..oracle import linear_gaussian_eig, linear_unknown_eig_mc
from ..trainer import train, train_baseline
from .chart import emit_chart, emit_trace_chart
from .config import ExperimentConfig
from .results import ResultRow, write_csv

log = logging.getLogger(__name__)

EVAL_ESTIMATORS = ("posterior", "nmc-upper", "nmc-lower", "vnmc-upper", "cvnmc-lower")
# each upper bound shares its stream with the matching lower bound (common random
# numbers), so the sandwich width is not swamped by independent noise
STREAM_SLOT = {"posterior": 0, "nmc-upper": 1, "nmc-lower": 1, "vnmc-upper": 3, "cvnmc-lower": 3}
REFERENCE_TIMING = "reference (reference scale): amortized 293 s vs. baseline 920 s"


class MissingCheckpoint(FileNotFoundError):
    pass


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    out: Path
    timing: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def eval_designs(cfg: ExperimentConfig, model: GlmModel) -> np.ndarray:
    r = rngmod.stream(cfg.seed, rngmod.EVAL)
    return sample_designs(cfg.evaluation.n_eval_designs, cfg.train.n_units, model.n_predictors, r,
                          cfg.train.intercept)


def _pair_stream(seed, design_index, run, est_index):
    return rngmod.stream(seed, rngmod.EVAL, 1 + design_index, run, est_index)


def evaluate_pair(model, q, design, ev, seed, i, run, estimators=EVAL_ESTIMATORS) -> list[ResultRow]:
    """Every requested estimator on one (design, run) pair, each with its own stream."""
    rows = []
    for tag in EVAL_ESTIMATORS:
        if tag not in estimators:
            continue
        r = _pair_stream(seed, i, run, STREAM_SLOT[tag])
        t0 = time.perf_counter()
        if tag == "posterior":
            est = posterior_bound(model, design, q, ev.posterior_n, r)
        elif tag.startswith("nmc"):
            est = nmc(model, design, ev.nmc_n, ev.nmc_m, tag.split("-")[1], r)
        elif tag == "vnmc-upper":
            est = vnmc_upper(model, design, q, ev.vnmc_n, ev.vnmc_m, r)
        else:
            est = cvnmc_lower(model, design, q, ev.vnmc_n, ev.vnmc_m, r)
        dt = time.perf_counter() - t0 if ev.record_timing else 0.0
        rows.append(ResultRow(i, tag, run, est.value, est.std_err, est.n, est.m, dt))
    return rows


def oracle_rows(model, designs, ev, seed) -> list[ResultRow]:
    rows = []
    for i, d in enumerate(designs):
        if model.family == "normal":
            rows.append(ResultRow(i, "oracle", 0, linear_gaussian_eig(d, model.prior_cov, model.noise_sd), 0.0, 0, 0))
        elif model.family == "normal-unknown":
            est = linear_unknown_eig_mc(d, model, ev.oracle_n, _pair_stream(seed, i, 0, len(EVAL_ESTIMATORS)))
            rows.append(ResultRow(i, "oracle", 0, est.value, est.std_err, est.n, 0))
    return rows


def _eval_job(args):
    model, q, design, ev, seed, i, run, estimators = args
    return evaluate_pair(model, q, design, ev, seed, i, run, estimators)


def evaluate_all(model, q_for_run, designs, ev, seed, workers=1, estimators=EVAL_ESTIMATORS) -> list[ResultRow]:
    """Fan out over (design, run); results are merged in (design, run) order whatever ``workers`` is."""
    jobs = [(model, q_for_run(run), d, ev, seed, i, run, estimators)
            for i, d in enumerate(designs) for run in range(ev.n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_eval_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        parts = [_eval_job(j) for j in jobs]
    rows = [r for part in parts for r in part]
    rows.sort(key=lambda r: (r.design, EVAL_ESTIMATORS.index(r.estimator), r.run))
    return rows


def _write_timing(out: Path, timing: dict, header: str | None = None) -> None:
    with open(out / "timing.txt", "w") as fh:
        if header:
            fh.write(header + "\n")
        for k, v in timing.items():
            fh.write(f"{k}: {v:.3f} s\n" if isinstance(v, float) else f"{k}: {v}\n")


def _trained_posterior(cfg, model, out, no_train, checkpoint, seed_offset=0):
    ckpt = Path(checkpoint) if checkpoint else out / "model.ckpt"
    if no_train:
        if not ckpt.exists():
            raise MissingCheckpoint(f"--no-train given but checkpoint {ckpt} does not exist")
        return AmortizedPosterior(model, load_checkpoint(ckpt)), None, 0.0
    tcfg = dataclasses.replace(cfg.train, seed=cfg.train.seed + seed_offset)
    t0 = time.perf_counter()
    run_ckpt = ckpt if seed_offset == 0 else ckpt.with_name(f"{ckpt.stem}.run{seed_offset}{ckpt.suffix}")
    fp, trace = train(model, cfg.encoder, cfg.flow, tcfg, checkpoint=run_ckpt)
    # evaluate from the saved file so a later --no-train run is bit-identical
    return AmortizedPosterior(model, load_checkpoint(run_ckpt)), trace, time.perf_counter() - t0


def run_model_experiment(cfg: ExperimentConfig, out=None, no_train=False, checkpoint=None,
                         workers=1, retrain_per_run=False) -> ExperimentResult:
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model.build()
    designs = eval_designs(cfg, model)
    timing = {}
    q, trace, t_train = _trained_posterior(cfg, model, out, no_train, checkpoint)
    posteriors = {0: q}
    if retrain_per_run:
        if no_train:
            raise ValueError("--retrain-per-run cannot be combined with --no-train")
        for run in range(1, cfg.evaluation.n_runs):
            posteriors[run], _, t = _trained_posterior(cfg, model, out, False, checkpoint, seed_offset=run)
            t_train += t
    if trace is not None:
        trace.write_csv(out / "loss_trace.csv")
        timing["train"] = t_train
    t0 = time.perf_counter()
    qf = (lambda run: posteriors[run]) if retrain_per_run else (lambda run: q)
    rows = evaluate_all(model, qf, designs, cfg.evaluation, cfg.seed, workers)
    timing["evaluate"] = time.perf_counter() - t0
    rows += oracle_rows(model, designs, cfg.evaluation, cfg.seed)
    write_csv(rows, out / "results.csv")
    ordering = "oracle" if any(r.estimator == "oracle" for r in rows) else "nmc-upper"
    emit_chart(rows, ordering, out / "chart.svg", title=f"{model.family}, {model.n_predictors} predictor(s)")
    _write_timing(out, timing)
    return ExperimentResult(rows, out, timing, {"ordering": ordering})


def run_amortization_experiment(cfg: ExperimentConfig, out=None, no_train=False, checkpoint=None,
                                workers=1) -> ExperimentResult:
    """One amortized fit against one baseline fit per evaluation design, posterior bound only."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model.build()
    designs = eval_designs(cfg, model)
    ev = cfg.evaluation
    q, trace, t_amort = _trained_posterior(cfg, model, out, no_train, checkpoint)
    if trace is not None:
        trace.write_csv(out / "loss_trace.csv")
    t0 = time.perf_counter()
    rows = evaluate_all(model, lambda run: q, designs, ev, cfg.seed, workers, estimators=("posterior",))
    t_amort_eval = time.perf_counter() - t0
    fit_times, t_base_eval = [], 0.0
    for i, d in enumerate(designs):
        t1 = time.perf_counter()
        qb, _, _ = train_baseline(model, d, dataclasses.replace(cfg.baseline, seed=cfg.baseline.seed + i))
        fit_times.append(time.perf_counter() - t1)
        t2 = time.perf_counter()
        for run in range(ev.n_runs):
            est = posterior_bound(model, d, qb, ev.posterior_n, _pair_stream(cfg.seed, i, run, 0))
            dt = time.perf_counter() - t2 if ev.record_timing else 0.0
            rows.append(ResultRow(i, "baseline-posterior", run, est.value, est.std_err, est.n, 0, dt))
        t_base_eval += time.perf_counter() - t2
    rows += oracle_rows(model, designs, ev, cfg.seed)
    rows.sort(key=lambda r: (r.design, r.estimator, r.run))
    write_csv(rows, out / "results.csv")
    ordering = "oracle" if model.family == "normal" else "nmc-upper"
    if ordering == "oracle":
        emit_chart(rows, ordering, out / "chart.svg", title="amortized vs. per-design baseline")
    timing = {
        "amortized-train": t_amort,
        "amortized-eval": t_amort_eval,
        "baseline-train-total": float(sum(fit_times)),
        "baseline-train-per-design-mean": float(np.mean(fit_times)),
        "baseline-eval": t_base_eval,
        "designs": len(designs),
    }
    _write_timing(out, timing, header=REFERENCE_TIMING)
    return ExperimentResult(rows, out, timing, {"fit_times": fit_times})


def arch_variants(cfg: ExperimentConfig) -> list[tuple[str, EncoderConfig, FlowConfig]]:
    """{encoders} x ({transforms other than none} x {counts} + none)."""
    out = []
    a = cfg.archstudy
    for enc in a.encoders:
        ecfg = dataclasses.replace(cfg.encoder, encoder_kind=enc)
        for kind in a.transforms:
            counts = (0,) if kind == "none" else a.counts
            for c in counts:
                fcfg = dataclasses.replace(cfg.flow, transform_kind=kind, n_transforms=c)
                name = f"{enc}/{kind}" + ("" if kind == "none" else f"/{c}")
                out.append((name, ecfg, fcfg))
    return out


def run_archstudy(cfg: ExperimentConfig, out=None, window: int = 50, only=None) -> ExperimentResult:
    """Train every variant on the same design/sample streams and compare end-of-training losses."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model.build()
    traces, summary, timing = {}, {}, {}
    for name, ecfg, fcfg in arch_variants(cfg):
        if only is not None and name not in only:
            continue
        t0 = time.perf_counter()
        _, trace = train(model, ecfg, fcfg, cfg.train)
        timing[name] = time.perf_counter() - t0
        traces[name] = trace
        summary[name] = trace.window_mean(window)
        log.info("%s: final %d-step mean loss %.4f", name, window, summary[name])
    with open(out / "loss_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "step", "loss", "seconds"])
        for name, tr in traces.items():
            for s, (l, t) in enumerate(zip(tr.losses, tr.seconds)):
                w.writerow([name, s, f"{l:.17g}", f"{t:.6f}"])
    with open(out / "archstudy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", f"final-{window}-mean-loss"])
        for name, v in summary.items():
            w.writerow([name, f"{v:.17g}"])
    emit_trace_chart({k: t.losses for k, t in traces.items()}, out / "chart.svg", window)
    _write_timing(out, timing)
    return ExperimentResult([], out, timing, {"summary": summary, "traces": traces})


def run_oracle_check(cfg: ExperimentConfig, out=None, workers=1) -> ExperimentResult:
    """Oracle against the two NMC bounds; no training involved."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model.build()
    designs = eval_designs(cfg, model)
    rows = evaluate_all(model, lambda run: None, designs, cfg.evaluation, cfg.seed, workers,
                        estimators=("nmc-upper", "nmc-lower"))
    orc = oracle_rows(model, designs, cfg.evaluation, cfg.seed)
    rows += orc
    write_csv(rows, out / "results.csv")
    emit_chart(rows, "oracle" if orc else "nmc-upper", out / "chart.svg", title="oracle check")
    return ExperimentResult(rows, out)
