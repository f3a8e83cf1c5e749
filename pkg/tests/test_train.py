import csv

import numpy as np
import pytest

from vidtok import autodiff as ad
from vidtok.autodiff import NonFiniteError, Tensor
from vidtok.model import VidTok, param_digest
from vidtok.quantize import RegularizerConfig
from vidtok.synth import SynthConfig, render_clip, synth_batch
from vidtok.train import (
    AdamState,
    LossWeights,
    TrainConfig,
    adam_step,
    evaluate,
    loss_terms,
    run_stage,
    total_loss,
)

from conftest import grad_error, micro_config

TINY_DATA = SynthConfig(resolution=4, clip_length=5, seed=3)


def tiny_model(reg=None, seed=0):
    return VidTok(micro_config(), reg or RegularizerConfig.fsq((5, 5, 5)), seed=seed)


# -- loss -----------------------------------------------------------------------------


def test_total_loss_identical_is_zero():
    x = np.random.default_rng(0).normal(size=(1, 2, 3, 2, 2))
    assert total_loss(x, Tensor(x), Tensor(0.0)).item() == 0.0


def test_total_loss_constant_offset():
    x = np.zeros((1, 2, 3, 2, 2))
    assert total_loss(x, Tensor(x + 1), Tensor(0.0)).item() == pytest.approx(1.0)
    l2 = LossWeights(distance="l2")
    assert total_loss(x, Tensor(x + 2), Tensor(0.0), l2).item() == pytest.approx(4.0)


def test_total_loss_adds_regularization_and_hooks():
    x = np.zeros((1, 1, 3, 2, 2))
    w = LossWeights(reconstruction=2.0, perceptual=0.5)
    terms = loss_terms(x, Tensor(x + 1), Tensor(0.25), w, perceptual=lambda a, b: Tensor(4.0))
    assert terms["loss"].item() == pytest.approx(2.0 + 0.25 + 2.0)
    assert terms["adversarial"].item() == 0.0


def test_total_loss_errors():
    with pytest.raises(ValueError):
        total_loss(np.zeros((1, 2)), Tensor(np.zeros((2, 1))), Tensor(0.0))
    with pytest.raises(ValueError):
        total_loss(np.zeros(2), Tensor(np.ones(2)), Tensor(0.0), LossWeights(distance="huber"))


@pytest.mark.parametrize("distance", ["l1", "l2"])
def test_total_loss_gradient(rng, f64, distance):
    x = rng.normal(size=(1, 2, 3, 2, 2))
    xhat = Tensor(x + rng.uniform(0.1, 0.5, size=x.shape) * rng.choice([-1, 1], size=x.shape), requires_grad=True)
    w = LossWeights(distance=distance)
    assert grad_error(lambda: total_loss(x, xhat, Tensor(0.3), w), xhat) < 1e-6


# -- optimizer ------------------------------------------------------------------------


def test_adam_zero_gradient():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    state = AdamState()
    adam_step(p, {"w": np.array([1.0, 1.0])}, state, 0.1)
    before, m_before = p["w"].data.copy(), state.m["w"].copy()
    adam_step(p, {"w": np.zeros(2)}, state, 0.0)
    np.testing.assert_array_equal(p["w"].data, before)
    np.testing.assert_allclose(state.m["w"], 0.9 * m_before)


def test_adam_first_step_is_minus_lr():
    p = {"w": Tensor(np.array([0.5]), requires_grad=True, dtype=np.float64)}
    adam_step(p, {"w": np.array([1.0])}, AdamState(), 1e-3)
    # m_hat / sqrt(v_hat) = 1, so the step is lr / (1 + eps)
    assert p["w"].data[0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)


def test_adam_frozen_parameter_is_untouched():
    p = {"a": Tensor(np.ones(3), requires_grad=True), "b": Tensor(np.ones(3), requires_grad=True)}
    before = p["a"].data.tobytes()
    adam_step(p, {"a": np.ones(3), "b": np.ones(3)}, AdamState(), 0.1, frozen={"a"})
    assert p["a"].data.tobytes() == before
    assert not np.array_equal(p["b"].data, np.ones(3))


def test_adam_rejects_nan():
    p = {"w": Tensor(np.ones(2), requires_grad=True)}
    with pytest.raises(NonFiniteError):
        adam_step(p, {"w": np.array([np.nan, 0.0])}, AdamState(), 0.1)
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.ones(3)}, AdamState(), 0.1)


# -- synthetic data --------------------------------------------------------------------


def test_synth_stride_and_range():
    assert SynthConfig(source_fps=24, sample_fps=24).stride == 1
    assert SynthConfig(source_fps=24, sample_fps=3).stride == 8
    batch = synth_batch(SynthConfig(resolution=16, clip_length=5), 2)
    assert batch.shape == (2, 5, 3, 16, 16) and batch.dtype == np.float32
    assert batch.min() >= -1.0 and batch.max() <= 1.0


def test_synth_config_errors():
    with pytest.raises(ValueError):
        SynthConfig(source_fps=8, sample_fps=24)
    with pytest.raises(ValueError):
        SynthConfig(source_fps=24, sample_fps=5)


def test_synth_is_deterministic():
    cfg = SynthConfig(resolution=16, clip_length=5, seed=11)
    np.testing.assert_array_equal(synth_batch(cfg, 3, 7), synth_batch(cfg, 3, 7))
    assert not np.array_equal(synth_batch(cfg, 3, 7), synth_batch(cfg, 3, 8))


def test_reduced_frame_rate_scales_motion():
    straight = 0
    for seed in range(20):
        fast = SynthConfig(resolution=64, clip_length=17, source_fps=24, sample_fps=24, objects=(1, 1))
        slow = SynthConfig(resolution=64, clip_length=3, source_fps=24, sample_fps=3, objects=(1, 1))
        _, c_fast = render_clip(fast, np.random.default_rng(seed))
        _, c_slow = render_clip(slow, np.random.default_rng(seed))
        # the slow clip is the fast timeline sampled every 8th frame
        np.testing.assert_allclose(c_slow[:, 1], c_fast[:, 8])
        steps = np.diff(c_fast[0, :9], axis=0)
        if np.allclose(steps, steps[0]):  # no wall bounce in the first 8 source frames
            straight += 1
            shift_slow = np.linalg.norm(c_slow[0, 1] - c_slow[0, 0])
            shift_fast = np.linalg.norm(c_fast[0, 1] - c_fast[0, 0])
            assert shift_slow == pytest.approx(8 * shift_fast)
    assert straight >= 10


# -- stages ---------------------------------------------------------------------------


def test_stage_one_curve_and_outputs(tmp_path):
    cfg = TrainConfig(stage=1, steps=6, batch_size=2, log_every=2)
    res = run_stage(cfg, TINY_DATA, model=tiny_model(), out_path=tmp_path / "s1.vtck", curve_path=tmp_path / "c.csv")
    assert [row["step"] for row in res.curve] == [0, 2, 4, 5]
    assert (tmp_path / "s1.vtck").read_bytes() == res.checkpoint
    rows = list(csv.DictReader(open(tmp_path / "c.csv")))
    assert len(rows) == 4 and 0.0 <= float(rows[-1]["utilization"]) <= 1.0
    assert res.frozen == set()


def test_stage_two_freezes_everything_but_the_decoder(tmp_path):
    model = tiny_model(RegularizerConfig.vq(16, 3))
    stage1 = run_stage(TrainConfig(stage=1, steps=3, batch_size=2), TINY_DATA, model=model)
    video = synth_batch(TINY_DATA, 1, 99)
    before = {p: param_digest(stage1.model, p) for p in ("encoder.", "quantizer.", "decoder.")}
    latent_before = stage1.model.encode(video).data.copy()

    big = SynthConfig(resolution=8, clip_length=5, seed=4)
    stage2 = run_stage(TrainConfig(stage=2, steps=3, batch_size=2), big, checkpoint=stage1.checkpoint)
    assert all(not n.startswith("decoder.") for n in stage2.frozen)
    assert {n for n in stage2.model.parameters() if n.startswith("encoder.")} <= stage2.frozen
    assert param_digest(stage2.model, "encoder.") == before["encoder."]
    assert param_digest(stage2.model, "quantizer.") == before["quantizer."]
    assert param_digest(stage2.model, "decoder.") != before["decoder."]
    np.testing.assert_array_equal(stage2.model.encode(video).data, latent_before)
    for name in stage2.frozen:
        assert not stage2.model.parameters()[name].grad.any()


def test_stage_two_needs_a_checkpoint(tmp_path):
    with pytest.raises(ValueError):
        run_stage(TrainConfig(stage=2, steps=1), TINY_DATA)
    with pytest.raises(FileNotFoundError):
        run_stage(TrainConfig(stage=2, steps=1), TINY_DATA, checkpoint=tmp_path / "missing.vtck")
    with pytest.raises(ValueError):
        TrainConfig(stage=3)


def test_same_seed_same_curve():
    cfg = TrainConfig(stage=1, steps=4, batch_size=2, log_every=1, seed=5)
    a = run_stage(cfg, TINY_DATA, model=tiny_model(RegularizerConfig.kl(3), seed=5))
    b = run_stage(cfg, TINY_DATA, model=tiny_model(RegularizerConfig.kl(3), seed=5))
    assert [r["loss"] for r in a.curve] == [r["loss"] for r in b.curve]
    assert a.checkpoint == b.checkpoint


def test_prefetching_matches_serial_run():
    serial = TrainConfig(stage=1, steps=4, batch_size=2, log_every=1)
    threaded = TrainConfig(stage=1, steps=4, batch_size=2, log_every=1, deterministic=False)
    a = run_stage(serial, TINY_DATA, model=tiny_model())
    b = run_stage(threaded, TINY_DATA, model=tiny_model())
    assert [r["loss"] for r in a.curve] == [r["loss"] for r in b.curve]


def test_non_finite_loss_aborts():
    model = tiny_model()
    with pytest.raises(NonFiniteError):
        run_stage(TrainConfig(steps=1, batch_size=1), lambda step: np.full((1, 5, 3, 4, 4), np.nan, np.float32), model=model)


def test_evaluate_reports_usage():
    model = tiny_model()
    out = evaluate(model, [synth_batch(TINY_DATA, 2, i) for i in range(2)])
    assert out["reconstruction"] > 0
    assert out["usage"].sum() == 2 * 2 * 3 * 2 * 2  # batches x clips x latent frames x 2 x 2
    assert 0 < out["utilization"] <= 1
    kl = evaluate(tiny_model(RegularizerConfig.kl(3)), [synth_batch(TINY_DATA, 1)])
    assert np.isnan(kl["utilization"]) and kl["usage"] is None
