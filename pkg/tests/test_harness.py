import dataclasses
import math

import numpy as np
import pytest

from amortized_eig.harness import cli
from amortized_eig.harness.chart import emit_chart, series
from amortized_eig.harness.config import (
    REFERENCE_EVAL, REFERENCE_TRAIN, ConfigError, ExperimentConfig, load_config,
)
from amortized_eig.harness.experiments import (
    EVAL_ESTIMATORS, arch_variants, evaluate_all, run_model_experiment,
)
from amortized_eig.harness.results import IncompleteTable, ResultRow, read_csv, write_csv
from amortized_eig.models import sample_designs

TINY = """
kind = "model"
seed = 3

[model]
family = "{family}"
n_predictors = 1

[encoder]
embed_width = 8
token_width = 12
attn_heads = 2
head_dim = 6
post_attn_projection = 6
emitter_width = 8

[flow]
n_transforms = 2
coupling_net_width = 8
base_net_width = 8

[train]
steps = 3
designs_per_step = 2
mc_samples = 4

[evaluation]
n_eval_designs = 3
n_runs = 2
posterior_n = 20
vnmc_n = 10
vnmc_m = 3
nmc_n = 30
nmc_m = 5
oracle_n = 200
"""


@pytest.fixture
def tiny_config(tmp_path):
    def make(family="normal", extra=""):
        path = tmp_path / f"{family}.toml"
        path.write_text(TINY.format(family=family) + extra)
        return path
    return make


def test_shipped_configs_load():
    for name in ("linear.toml", "linear-unknown.toml", "archstudy.toml", "amortization.toml", "reference.toml"):
        load_config(cli.shipped_config(name))


def test_reference_defaults_echo():
    assert (REFERENCE_TRAIN.steps, REFERENCE_TRAIN.designs_per_step, REFERENCE_TRAIN.mc_samples) == (5000, 50, 50)
    assert REFERENCE_EVAL.posterior_n == 5000
    assert (REFERENCE_EVAL.vnmc_n, REFERENCE_EVAL.vnmc_m) == (1000, 31)
    assert (REFERENCE_EVAL.nmc_n, REFERENCE_EVAL.nmc_m) == (30000, 173)
    ref = load_config(cli.shipped_config("reference.toml"))
    assert (ref.train.steps, ref.train.designs_per_step) == (5000, 50)
    assert ref.evaluation == dataclasses.replace(REFERENCE_EVAL)


def test_desk_defaults():
    cfg = ExperimentConfig().desk_scale()
    assert (cfg.train.steps, cfg.train.designs_per_step, cfg.train.mc_samples) == (500, 10, 25)
    ev = cfg.evaluation
    assert (ev.posterior_n, ev.vnmc_n, ev.vnmc_m, ev.nmc_n, ev.nmc_m) == (1000, 200, 15, 5000, 70)


def test_unknown_keys_rejected(tiny_config):
    with pytest.raises(ConfigError, match="learning_rat"):
        load_config(tiny_config(extra="\n[baseline]\nlearning_rat = 0.1\n"))
    path = tiny_config()
    path.write_text("bogus = 1\n" + path.read_text())
    with pytest.raises(ConfigError, match="bogus"):
        load_config(path)


def test_bad_values_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('kind = "model"\n[evaluation]\nn_runs = 0\n')
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text('kind = "nonsense"\n')
    with pytest.raises(ConfigError):
        load_config(p)


def test_seed_propagates(tiny_config):
    cfg = load_config(tiny_config())
    assert cfg.train.seed == 3
    assert cfg.with_seed(11).train.seed == 11


def test_archstudy_grid_has_ten_variants():
    names = [v[0] for v in arch_variants(ExperimentConfig())]
    assert len(names) == 2 * (2 * 2 + 1) == 10
    assert len(set(names)) == 10


def test_csv_round_trip(tmp_path):
    rows = [ResultRow(0, "nmc-upper", 0, 1 / 3, 0.1, 100, 10, 0.0), ResultRow(0, "oracle", 0, math.pi, 0.0, 0, 0)]
    write_csv(rows, tmp_path / "r.csv")
    assert read_csv(tmp_path / "r.csv") == rows
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "design-index,estimator-tag,run-index,value,std-err,N,M,seconds"
    with pytest.raises(ValueError):
        write_csv([ResultRow(0, "x", 0, float("nan"), 0.0, 1, 1)], tmp_path / "bad.csv")


def test_chart_rejects_incomplete_table(tmp_path):
    rows = [ResultRow(0, "posterior", 0, 1.0, 0.1, 10, 0), ResultRow(0, "posterior", 1, 1.1, 0.1, 10, 0),
            ResultRow(1, "posterior", 0, 1.2, 0.1, 10, 0)]
    with pytest.raises(IncompleteTable):
        emit_chart(rows, "nmc-upper", tmp_path / "c.svg")


def test_model_experiment_outputs_and_determinism(tiny_config, tmp_path):
    cfg = load_config(tiny_config())
    a = run_model_experiment(cfg, tmp_path / "a")
    b = run_model_experiment(cfg, tmp_path / "b")
    csv_a = (tmp_path / "a" / "results.csv").read_bytes()
    assert csv_a == (tmp_path / "b" / "results.csv").read_bytes()
    assert (tmp_path / "a" / "chart.svg").read_bytes() == (tmp_path / "b" / "chart.svg").read_bytes()
    for f in ("loss_trace.csv", "timing.txt", "chart.svg", "model.ckpt"):
        assert (tmp_path / "a" / f).exists()
    ev = cfg.evaluation
    non_oracle = [r for r in a.rows if r.estimator != "oracle"]
    assert len(non_oracle) == ev.n_eval_designs * len(EVAL_ESTIMATORS) * ev.n_runs
    assert sum(r.estimator == "oracle" for r in a.rows) == ev.n_eval_designs
    assert all(math.isfinite(r.value) for r in a.rows)
    # evaluation from the saved checkpoint reproduces the rows bit for bit
    c = run_model_experiment(cfg, tmp_path / "c", no_train=True, checkpoint=tmp_path / "a" / "model.ckpt")
    assert (tmp_path / "c" / "results.csv").read_bytes() == csv_a
    # sorted x axis: the oracle series is non-decreasing
    order, data = series(c.rows, "oracle")
    assert np.all(np.diff(data["oracle"][0]) >= 0)
    assert len(data) == 6


def test_chart_regenerates_from_csv(tiny_config, tmp_path):
    cfg = load_config(tiny_config())
    run_model_experiment(cfg, tmp_path / "a")
    rows = read_csv(tmp_path / "a" / "results.csv")
    emit_chart(rows, "oracle", tmp_path / "again.svg", title="normal, 1 predictor(s)")
    assert (tmp_path / "again.svg").read_bytes() == (tmp_path / "a" / "chart.svg").read_bytes()


def test_workers_do_not_change_results(tiny_config):
    cfg = load_config(tiny_config("logistic"))
    model = cfg.model.build()
    from amortized_eig.estimators import PriorApprox
    q = PriorApprox(model)
    designs = sample_designs(3, 5, 1, np.random.default_rng(0))
    one = evaluate_all(model, lambda r: q, designs, cfg.evaluation, 0, workers=1)
    two = evaluate_all(model, lambda r: q, designs, cfg.evaluation, 0, workers=2)
    assert one == two


def test_cli_exit_codes(tiny_config, tmp_path, capsys):
    assert cli.run(["evaluate", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG
    path = tiny_config()
    assert cli.run(["evaluate", "--config", str(path), "--no-train", "--out", str(tmp_path / "o"),
                    "--checkpoint", str(tmp_path / "missing.ckpt")]) == cli.EXIT_CHECKPOINT
    assert cli.run(["train", "--config", str(path), "--out", str(tmp_path / "t")]) == cli.EXIT_OK
    assert (tmp_path / "t" / "model.ckpt").exists()
    assert cli.run(["evaluate", "--config", str(path), "--no-train", "--out", str(tmp_path / "e"),
                    "--checkpoint", str(tmp_path / "t" / "model.ckpt"), "--seed", "3"]) == cli.EXIT_OK
    assert cli.run(["oracle", "--config", str(tiny_config("normal-unknown")), "--out", str(tmp_path / "u")]) == 0
    bad = tiny_config("normal")
    bad.write_text(bad.read_text().replace("nmc_m = 5", "nmc_m = 0"))
    assert cli.run(["oracle", "--config", str(bad), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG


def test_amortization_experiment(tiny_config, tmp_path):
    from amortized_eig.harness.experiments import run_amortization_experiment
    cfg = load_config(tiny_config(extra="\n[baseline]\nsteps = 20\nmc_samples = 5\n"))
    res = run_amortization_experiment(cfg, tmp_path / "am")
    text = (tmp_path / "am" / "timing.txt").read_text()
    assert "293 s vs. baseline 920 s" in text.splitlines()[0]
    assert len(res.extra["fit_times"]) == cfg.evaluation.n_eval_designs
    tags = {r.estimator for r in res.rows}
    assert tags == {"posterior", "baseline-posterior", "oracle"}
