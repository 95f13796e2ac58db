import math

import numpy as np
import pytest

from amortized_eig import trainer
from amortized_eig.flow.checkpoint import load_checkpoint
from amortized_eig.flow.config import EncoderConfig, FlowConfig
from amortized_eig.flow.posterior import init_flow_params, log_q_tensor
from amortized_eig.models import sample_designs, scaled_identity_model
from amortized_eig.tensor import ops
from amortized_eig.tensor.nn import ParamSet
from amortized_eig.trainer import (
    AdamState, TrainConfig, TrainingAborted, adamw_step, clip_gradients, joint_samples, posterior_loss,
    train, train_baseline,
)

TINY_ENC = EncoderConfig(embed_width=8, token_width=12, attn_heads=2, head_dim=6, post_attn_projection=6,
                         emitter_width=8, dropout_p=0.1)
TINY_FLOW = FlowConfig(n_transforms=2, coupling_net_width=8, base_net_width=8)


def _scalar(w):
    return ParamSet(w=np.array([w]))


def test_adamw_hand_example():
    params = _scalar(1.0)
    state = AdamState()
    adamw_step(params, {"w": np.array([0.5])}, state, lr=0.1, betas=(0.9, 0.999), weight_decay=0.0, eps=1e-8)
    assert params["w"][0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-15)
    assert params["w"][0] == pytest.approx(0.9, abs=1e-7)
    assert state.step == 1


def test_adamw_zero_gradient_no_decay_is_noop():
    params = _scalar(1.3)
    adamw_step(params, {"w": np.zeros(1)}, AdamState(), lr=0.1, weight_decay=0.0)
    assert params["w"][0] == 1.3


def test_adamw_decay_is_decoupled():
    params = _scalar(2.0)
    state = AdamState()
    adamw_step(params, {"w": np.zeros(1)}, state, lr=0.1, weight_decay=0.5)
    assert params["w"][0] == pytest.approx(2.0 * (1 - 0.1 * 0.5), abs=1e-15)
    assert state.m["w"][0] == 0.0 and state.v["w"][0] == 0.0


def test_clip_gradients():
    g = {"a": np.array([3.0, 4.0])}
    norm, clipped = clip_gradients(g, 1.0)
    assert norm == 5.0 and clipped
    np.testing.assert_allclose(g["a"], [0.6, 0.8])
    with pytest.raises(TrainingAborted):
        clip_gradients({"a": np.array([np.nan])}, 1.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    assert TrainConfig().learning_rate == 5e-4
    assert TrainConfig().weight_decay == 0.01


def test_initial_loss_is_prior_cross_entropy():
    model = scaled_identity_model("normal", 1)
    fp = init_flow_params(model, EncoderConfig(), FlowConfig(), 0)
    _, _, loss = posterior_loss(fp, model, np.zeros((100, 5, 2)), 25, seed=0)
    assert abs(float(loss.data) - (math.log(2 * math.pi) + 1.0)) < 0.1


def test_loss_permutation_invariant():
    model = scaled_identity_model("logistic", 2)
    fp = init_flow_params(model, TINY_ENC, TINY_FLOW, 0)
    for v in fp.arrays.values():
        v += 0.01 * np.random.default_rng(1).standard_normal(v.shape)
    designs = sample_designs(3, 5, 2, np.random.default_rng(2))
    latent, units = joint_samples(model, designs, 8, seed=3, step=0)
    p = fp.arrays.bind(None)
    ref = float(ops.mean(log_q_tensor(p, fp, model, units, latent)).data)
    for perm in ([4, 3, 2, 1, 0], [1, 0, 3, 4, 2]):
        val = float(ops.mean(log_q_tensor(p, fp, model, units[:, perm], latent)).data)
        assert abs(val - ref) < 1e-6


def test_loss_gradient_matches_finite_differences():
    model = scaled_identity_model("normal", 1)
    fp = init_flow_params(model, TINY_ENC, TINY_FLOW, 0)
    r = np.random.default_rng(4)
    for v in fp.arrays.values():
        v += 0.05 * r.standard_normal(v.shape)
    designs = sample_designs(2, 5, 1, r)
    g, bound, loss = posterior_loss(fp, model, designs, 6, seed=5, training=False)
    g.backward(loss)
    for name in ("t0.out.w", "base.out.b", "embed.in.w", "attn1.q.w"):
        analytic = g.grad(bound[name]).reshape(-1)
        arr = fp.arrays[name].reshape(-1)
        for j in r.choice(arr.size, size=3, replace=False):
            orig = arr[j]
            vals = []
            for h in (1e-5, -1e-5):
                arr[j] = orig + h
                vals.append(float(posterior_loss(fp, model, designs, 6, seed=5, training=False)[2].data))
            arr[j] = orig
            numeric = (vals[0] - vals[1]) / 2e-5
            assert abs(analytic[j] - numeric) / max(1.0, abs(analytic[j])) < 1e-4, name


def test_training_deterministic():
    model = scaled_identity_model("normal", 1)
    cfg = TrainConfig(steps=3, designs_per_step=2, mc_samples=4, seed=9)
    a, ta = train(model, TINY_ENC, TINY_FLOW, cfg)
    b, tb = train(model, TINY_ENC, TINY_FLOW, cfg)
    assert ta.losses == tb.losses
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)


def test_abort_preserves_checkpoint(tmp_path, monkeypatch):
    model = scaled_identity_model("normal", 1)
    real = trainer.posterior_loss

    def flaky(fp, model, designs, n, seed, step=0, training=True):
        if step == 2:
            raise TrainingAborted("step 2: non-finite log q at design 0, sample 0")
        return real(fp, model, designs, n, seed, step, training)

    monkeypatch.setattr(trainer, "posterior_loss", flaky)
    ckpt = tmp_path / "m.ckpt"
    with pytest.raises(TrainingAborted, match="design 0"):
        train(model, TINY_ENC, TINY_FLOW, TrainConfig(steps=5, designs_per_step=1, mc_samples=3), checkpoint=ckpt)
    assert load_checkpoint(ckpt).extra["aborted_at_step"] == 2


def test_loss_trace_csv(tmp_path):
    model = scaled_identity_model("normal", 1)
    _, tr = train(model, TINY_ENC, TINY_FLOW, TrainConfig(steps=2, designs_per_step=1, mc_samples=3))
    tr.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,loss,seconds" and len(lines) == 3 and len(tr) == 2


def test_desk_training_reduces_loss():
    model = scaled_identity_model("normal", 1)
    _, tr = train(model, EncoderConfig(), FlowConfig(), TrainConfig(steps=300, designs_per_step=10, mc_samples=25))
    assert tr.window_mean(50) < tr.window_mean(50, first=True)


def test_baseline_zero_design_recovers_prior():
    model = scaled_identity_model("normal", 1, 2.0)
    cfg = TrainConfig(steps=5000, designs_per_step=1, mc_samples=50, learning_rate=1e-3, seed=1)
    q, _, tr = train_baseline(model, np.zeros((5, 2)), cfg)
    np.testing.assert_allclose(np.diag(q.sigma), 2.0, rtol=0.1)
    assert np.max(np.abs(q.a)) < 0.1
    q2, _, tr2 = train_baseline(model, np.zeros((5, 2)), cfg)
    assert tr.losses == tr2.losses and np.array_equal(q.sigma, q2.sigma)


def test_baseline_rejects_unknown_noise():
    with pytest.raises(ValueError):
        train_baseline(scaled_identity_model("normal-unknown", 1), np.zeros((5, 2)), TrainConfig(steps=1))
