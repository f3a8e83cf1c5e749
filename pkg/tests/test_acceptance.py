"""The nine acceptance criteria, each with its tolerance and runtime budget.

Every test records one ``[PASS]``/``[FAIL]`` line, printed at the end of the run.
"""

import contextlib
import math
import time

import numpy as np
import pytest

from vidtok import autodiff as ad
from vidtok.autodiff import Tensor
from vidtok.cli import main as cli
from vidtok.codec import pack_tokens, payload_bits, unpack_tokens, write_raw_video, to_bytes
from vidtok.metrics import psnr, ssim
from vidtok.model import (
    ModelConfig,
    Variant,
    VidTok,
    alpha_blend,
    count_flops,
    count_params,
    param_digest,
    save_checkpoint,
    temporal_avg_pool,
)
from vidtok.quantize import (
    PRESETS,
    RegularizerConfig,
    entropy_penalty,
    fsq_bound,
    fsq_project,
    fsq_quantize,
    fsq_unindex,
    kl_regularize,
    lfq_quantize,
    lfq_unindex,
    utilization_rate,
    vq_quantize,
    vq_unindex,
)
from vidtok.synth import SynthConfig, synth_batch
from vidtok.train import TrainConfig, evaluate, run_stage, total_loss

from conftest import ACCEPTANCE_LINES, micro_config


@contextlib.contextmanager
def criterion(number, title, budget, spent=0.0):
    """``spent`` adds time already used by a shared fixture."""
    start = time.perf_counter() - spent
    status, note = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - start
        if elapsed > budget:
            note = f" (over the {budget:g} s budget)"
            raise AssertionError(f"criterion {number} took {elapsed:.1f} s, budget {budget} s")
        status = "PASS"
    except BaseException as exc:
        note = note or f" ({type(exc).__name__}: {str(exc).splitlines()[0][:100] if str(exc) else ''})"
        raise
    finally:
        elapsed = time.perf_counter() - start
        ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}, {elapsed:.1f} s{note}")


# -- shared training smoke ----------------------------------------------------------------

SMOKE_MODEL = ModelConfig(causal=True, r_t=2, r_s=4, latent_channels=3, base_channels=8,
                          channel_multipliers=(1, 2), blocks_per_stage=1)
SMOKE_DATA = SynthConfig(resolution=16, clip_length=9, seed=0)
SMOKE_STEPS = 500


def _eval_batches():
    held_out = SynthConfig(resolution=16, clip_length=9, seed=99)
    return [synth_batch(held_out, 8, i) for i in range(4)]


def _smoke_run(reg):
    model = VidTok(SMOKE_MODEL, reg, seed=0)
    batches = _eval_batches()
    before = evaluate(model, batches)
    result = run_stage(TrainConfig(stage=1, steps=SMOKE_STEPS, batch_size=4, seed=0, log_every=1),
                       SMOKE_DATA, model=model)
    after = evaluate(result.model, batches)
    return {"before": before, "after": after, "result": result}


@pytest.fixture(scope="module")
def smoke():
    start = time.perf_counter()
    fsq = _smoke_run(RegularizerConfig.fsq((5, 5, 5)))
    vq = _smoke_run(RegularizerConfig.vq(125, 3))
    return {"fsq": fsq, "vq": vq, "seconds": time.perf_counter() - start}


# -- 1 ----------------------------------------------------------------------------------


def _op_cases(rng):
    """(name, function of the leaf tensors, leaf arrays)."""
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 3))
    pos = rng.uniform(0.5, 2.0, size=(2, 3))
    away = rng.uniform(0.2, 1.0, size=(2, 3)) * rng.choice([-1, 1], size=(2, 3))
    col = rng.normal(size=(2, 1))
    one = rng.normal(size=(1, 1))
    vid = rng.normal(size=(1, 4, 2, 3, 3))
    w3 = rng.normal(size=(3, 2, 3, 3, 3)) * 0.3
    w2 = rng.normal(size=(3, 2, 3, 3)) * 0.3
    w1 = rng.normal(size=(3, 2, 3)) * 0.3
    bias = rng.normal(size=3)
    gamma = rng.normal(size=2)
    c = ad.tensor_sum
    return [
        ("add", lambda x, y: c(ad.square(x + y)), [a, one]),
        ("sub", lambda x, y: c(ad.square(x - y)), [a, b]),
        ("mul", lambda x, y: c(x * y), [a, one]),
        ("div", lambda x, y: c(x / y), [a, pos]),
        ("neg", lambda x: c(ad.square(-x)), [a]),
        ("scale", lambda x: c(ad.square(ad.scale(x, np.array([1.0, 2.0, -3.0])))), [a]),
        ("add_const", lambda x: c(ad.square(ad.add_const(x, 0.5))), [a]),
        ("square", lambda x: c(ad.square(x)), [a]),
        ("exp", lambda x: c(ad.exp(x)), [a]),
        ("log", lambda x: c(ad.log(x)), [pos]),
        ("tanh", lambda x: c(ad.tanh(x)), [a]),
        ("sigmoid", lambda x: c(ad.sigmoid(x)), [a]),
        ("silu", lambda x: c(ad.silu(x)), [a]),
        ("absolute", lambda x: c(ad.absolute(x) * x), [away]),
        ("sum", lambda x: c(ad.square(ad.tensor_sum(x, axis=1))), [a]),
        ("mean", lambda x: c(ad.square(ad.mean(x, axis=0, keepdims=True))), [a]),
        ("reshape", lambda x: c(ad.reshape(x, (3, 2)) * Tensor(np.arange(6.0).reshape(3, 2))), [a]),
        ("transpose", lambda x: c(ad.transpose(x) * Tensor(np.arange(6.0).reshape(3, 2))), [a]),
        ("getitem", lambda x: c(ad.square(x[:, 1:])) + c(ad.square(x[[0, 0, 1], [2, 2, 0]])), [a]),
        ("concat", lambda x, y: c(ad.square(ad.concat([x, y], axis=1))), [a, col]),
        ("repeat", lambda x: c(ad.square(ad.repeat(x, 2, axis=0))), [a]),
        ("take", lambda x: c(ad.square(ad.take(x, np.array([1, 1, 0]), axis=0))), [a]),
        ("log_softmax", lambda x: c(ad.log_softmax(x, axis=1) * Tensor(b)), [a]),
        ("logsumexp", lambda x: c(ad.logsumexp(x, axis=0)), [a]),
        ("conv3d", lambda x, w, bb: c(ad.square(ad.conv3d(x, w, bb, (2, 1, 1), "causal_time"))), [vid, w3, bias]),
        ("conv2d", lambda x, w, bb: c(ad.square(ad.conv2d(x, w, bb, 2))), [vid, w2, bias]),
        ("conv1d", lambda x, w, bb: c(ad.square(ad.conv1d_temporal(x, w, bb, 1, True))), [vid, w1, bias]),
        ("layer_norm", lambda x, g: c(ad.layer_norm(x, g, None, axes=(2,)) * Tensor(vid)),
         [vid + 0.1, gamma]),
        ("alpha_blend", lambda x, y: c(ad.square(alpha_blend(x, y))), [vid, vid * 0.5 + 1]),
        ("avg_pool", lambda x: c(ad.square(temporal_avg_pool(x))), [vid]),
        ("kl", lambda x: kl_regularize(x, rng=3)[1] + c(kl_regularize(x, rng=3)[0]), [a[:, :2]]),
        ("entropy", lambda x: entropy_penalty(x, (5, 4, 3), 0.5), [a]),
        ("vq_codebook", lambda e: vq_quantize(Tensor(b), e).terms["codebook"], [a]),
        ("total_loss", lambda x: total_loss(b, x, c(ad.square(x))), [away + b]),
    ]


def _composite_kl(model, video):
    recon, res = model.forward(video, train=True, rng=11)
    return total_loss(video, recon, res.reg_loss, None)


def test_criterion_1_gradient_suite(rng):
    with criterion(1, "gradient suite (ops < 1e-4, composite < 1e-3)", 120):
        with ad.precision(np.float64):
            worst = {}
            for name, fn, arrays in _op_cases(rng):
                leaves = [Tensor(x, requires_grad=True) for x in arrays]
                f = lambda: fn(*leaves)
                out = f()
                out.backward()
                for i, leaf in enumerate(leaves):
                    numeric = ad.numeric_grad(f, leaf, eps=1e-6)
                    worst[f"{name}[{i}]"] = ad.relative_error(leaf.grad, numeric)
            bad = {k: v for k, v in worst.items() if v >= 1e-4}
            assert not bad, f"ops above 1e-4: {bad}"

            # KL composite: every parameter, fixed reparameterization noise
            model = VidTok(micro_config(), RegularizerConfig.kl(3), seed=2).astype(np.float64)
            video = rng.uniform(-1, 1, (1, 3, 3, 4, 4))
            f = lambda: _composite_kl(model, video)
            model.zero_grad()
            f().backward()
            analytic = {n: p.grad.copy() for n, p in model.parameters().items()}
            a = np.concatenate([analytic[n].ravel() for n in analytic])
            fd = np.concatenate([ad.numeric_grad(f, p, eps=1e-6).ravel() for p in model.parameters().values()])
            kl_err = ad.relative_error(a, fd)
            assert kl_err < 1e-3, f"KL composite relative error {kl_err:.2e}"

            # FSQ composite: decoder by plain differences; encoder against the
            # straight-through linearization <dL/dq, bound(z) / half> + regularizer
            reg = RegularizerConfig.fsq((5, 5, 5))
            model = VidTok(micro_config(), reg, seed=2).astype(np.float64)

            def loss():
                recon, res = model.forward(video, train=True)
                return total_loss(video, recon, res.reg_loss)

            model.zero_grad()
            loss().backward()
            analytic = {n: p.grad.copy() for n, p in model.parameters().items()}
            with ad.no_grad():
                q = model.regularize(model.encode(video), train=False).quantized.data
            q_leaf = Tensor(q, requires_grad=True)
            total_loss(video, model.decode(q_leaf), Tensor(0.0)).backward()
            g = Tensor(np.transpose(q_leaf.grad, (0, 1, 3, 4, 2)))
            half = (np.asarray(reg.levels) - 1) / 2.0

            def surrogate():
                pre = model.encode(video)
                bounded = fsq_bound(ad.transpose(pre, (0, 1, 3, 4, 2)), reg.levels)
                res = model.regularize(pre, train=True)
                return ad.tensor_sum(g * ad.scale(bounded, 1.0 / half)) + res.reg_loss

            parts_a, parts_n = [], []
            for name, p in model.parameters().items():
                target = loss if name.startswith("decoder.") else surrogate
                parts_a.append(analytic[name].ravel())
                parts_n.append(ad.numeric_grad(target, p, eps=1e-6).ravel())
            fsq_err = ad.relative_error(np.concatenate(parts_a), np.concatenate(parts_n))
            assert fsq_err < 1e-3, f"FSQ composite relative error {fsq_err:.2e}"
            print(f"worst op error {max(worst.values()):.1e}, KL composite {kl_err:.1e}, FSQ composite {fsq_err:.1e}")


# -- 2 ----------------------------------------------------------------------------------


def test_criterion_2_shape_contracts():
    with criterion(2, "shape contracts for 8 configurations at 64x64", 60):
        for causal, frames, r_t, n in [(True, 17, 4, 5), (False, 16, 4, 4), (True, 17, 2, 9)]:
            assert ModelConfig(causal=causal, r_t=r_t, r_s=8).latent_shape(frames, 256, 256) == (n, 32, 32)
        for causal in (True, False):
            for r_t in (2, 4):
                for r_s in (4, 8):
                    cfg = ModelConfig(causal=causal, r_t=r_t, r_s=r_s, latent_channels=4, base_channels=4,
                                      channel_multipliers=(1, 1, 1), blocks_per_stage=1)
                    frames = 17 if causal else 16
                    n = 1 + 16 // r_t if causal else 16 // r_t
                    model = VidTok(cfg, RegularizerConfig.fsq((5, 5, 5, 5)), seed=1)
                    video = np.zeros((1, frames, 3, 64, 64), dtype=np.float32)
                    with ad.no_grad():
                        pre = model.encode(video)
                        res = model.regularize(pre, train=False)
                        out = model.decode(res.quantized)
                    assert pre.shape == (1, n, 4, 64 // r_s, 64 // r_s)
                    assert res.indices.shape == (1, n, 64 // r_s, 64 // r_s)
                    assert out.shape == (1, frames, 3, 64, 64)


# -- 3 ----------------------------------------------------------------------------------


def test_criterion_3_causality():
    with criterion(3, "no future-frame leakage over 20 perturbations", 60):
        r_t = 4
        cfg = micro_config(r_t=r_t, r_s=2, channel_multipliers=(1, 1))
        model = VidTok(cfg, RegularizerConfig.kl(3), seed=4).astype(np.float64)
        rng = np.random.default_rng(2024)
        with ad.precision(np.float64), ad.no_grad():
            base = rng.uniform(-1, 1, (1, 17, 3, 8, 8))
            lat0 = model.encode(base).data
            out0 = model.decode(lat0[:, :, :3]).data
            for _ in range(20):
                t = int(rng.integers(0, 17))
                probe = base.copy()
                probe[:, t] += rng.normal(scale=rng.uniform(0.1, 1.0), size=probe[:, t].shape)
                lat = model.encode(probe).data
                out = model.decode(lat[:, :, :3]).data
                group = math.ceil(t / r_t)  # first latent frame allowed to see frame t
                settled = 0 if group == 0 else (group - 1) * r_t + 1
                assert np.array_equal(lat[:, :group], lat0[:, :group]), f"latent leak from frame {t}"
                assert np.array_equal(out[:, :settled], out0[:, :settled]), f"decoded leak from frame {t}"
                assert not np.array_equal(lat[:, group], lat0[:, group])


# -- 4 ----------------------------------------------------------------------------------


def test_criterion_4_quantizer_suite():
    with criterion(4, "quantizer suite", 60):
        rng = np.random.default_rng(7)
        with ad.precision(np.float64):
            # idempotence: the full map for L <= 5, the lattice projection for every preset
            z = rng.normal(scale=2.0, size=(10_000, 3))
            first = fsq_quantize(Tensor(z), (5, 5, 5))
            again = fsq_quantize(Tensor(first.quantized.data), (5, 5, 5))
            assert np.array_equal(again.quantized.data, first.quantized.data)
            for name, (kind, arg) in PRESETS.items():
                levels = arg if kind == "fsq" else (2,) * arg
                v = fsq_quantize(Tensor(rng.normal(scale=2.0, size=(2000, len(levels)))), levels).quantized.data
                assert np.array_equal(fsq_project(v, levels), v), name

            # bijections
            res = fsq_quantize(Tensor(z), (5, 5, 5))
            assert np.array_equal(fsq_unindex(res.indices, (5, 5, 5)), res.quantized.data)
            lres = lfq_quantize(Tensor(rng.normal(size=(1000, 6))), 6)
            assert np.array_equal(lfq_unindex(lres.indices, 6), lres.quantized.data)
            book = rng.uniform(-1, 1, (64, 3))
            vres = vq_quantize(Tensor(rng.normal(size=(1000, 3))), Tensor(book))
            assert np.array_equal(vq_unindex(vres.indices, book), vres.quantized.data)
            every = np.arange(125)
            assert np.array_equal(fsq_quantize(Tensor(np.arctanh(fsq_unindex(every, (5, 5, 5)) * 0.999)),
                                               (5, 5, 5)).indices, every)

            # LFQ == FSQ with binary levels
            zl = rng.normal(size=(10_000, 10))
            a, b = lfq_quantize(Tensor(zl), 10), fsq_quantize(Tensor(zl), (2,) * 10)
            assert np.array_equal(a.indices, b.indices) and np.array_equal(a.quantized.data, b.quantized.data)

            # straight-through: d(sum q)/dz is the bound derivative (FSQ) or exactly one (LFQ, VQ)
            zt = Tensor(rng.normal(size=(50, 3)), requires_grad=True)
            ad.tensor_sum(fsq_quantize(zt, (5, 5, 5)).quantized).backward()
            assert np.allclose(zt.grad, 1 - np.tanh(zt.data) ** 2, rtol=1e-12)
            zt.zero_grad()
            ad.tensor_sum(lfq_quantize(zt, 3).quantized).backward()
            assert np.array_equal(zt.grad, np.ones_like(zt.data))
            zt.zero_grad()
            ad.tensor_sum(vq_quantize(zt, Tensor(book)).quantized).backward()
            assert np.array_equal(zt.grad, np.ones_like(zt.data))

        # utilization on standard-normal samples
        zn = np.random.default_rng(0).standard_normal((10_000, 3))
        rate = utilization_rate(fsq_quantize(Tensor(zn), (5, 5, 5)).usage)
        assert rate >= 0.99, f"FSQ(5,5,5) utilization {rate:.4f}"


# -- 5 ----------------------------------------------------------------------------------


def test_criterion_5_training_smoke(smoke):
    with criterion(5, "training smoke: FSQ loss halves, FSQ utilization > VQ", 900, smoke["seconds"]):
        fsq, vq = smoke["fsq"], smoke["vq"]
        ratio = fsq["after"]["reconstruction"] / fsq["before"]["reconstruction"]
        u_fsq, u_vq = fsq["after"]["utilization"], vq["after"]["utilization"]
        losses = np.array([row["loss"] for row in fsq["result"].curve])
        smooth = np.convolve(losses, np.ones(50) / 50, mode="valid")
        print(f"FSQ reconstruction {fsq['before']['reconstruction']:.4f} -> {fsq['after']['reconstruction']:.4f} "
              f"(ratio {ratio:.3f}); utilization FSQ {u_fsq:.3f} vs VQ {u_vq:.3f}; "
              f"training took {smoke['seconds']:.0f} s")
        assert count_params(SMOKE_MODEL, RegularizerConfig.vq(125, 3)) - count_params(
            SMOKE_MODEL, RegularizerConfig.fsq((5, 5, 5))) == 125 * 3
        assert ratio <= 0.5
        assert u_fsq > u_vq
        assert smooth[-1] < smooth[0]  # window-50 mean at the last step vs steps 0..49


# -- 6 ----------------------------------------------------------------------------------


def test_criterion_6_two_stage(smoke):
    with criterion(6, "stage 2 freezes the encoder and changes the decoder", 600):
        stage1 = smoke["fsq"]["result"].checkpoint
        probe = synth_batch(SynthConfig(resolution=32, clip_length=9, seed=5), 2)
        model1 = smoke["fsq"]["result"].model
        with ad.no_grad():
            latent_before = model1.encode(probe).data.copy()
            tokens_before = model1.tokenize(probe)
        digests = {p: param_digest(model1, p) for p in ("encoder.", "decoder.")}
        high_res = SynthConfig(resolution=32, clip_length=9, seed=1)
        stage2 = run_stage(TrainConfig(stage=2, steps=40, batch_size=4, seed=1), high_res, checkpoint=stage1)
        model2 = stage2.model
        enc1 = {n: p.data.tobytes() for n, p in model1.parameters().items() if n.startswith("encoder.")}
        enc2 = {n: p.data.tobytes() for n, p in model2.parameters().items() if n.startswith("encoder.")}
        assert enc1 == enc2
        assert param_digest(model2, "encoder.") == digests["encoder."]
        assert param_digest(model2, "decoder.") != digests["decoder."]
        with ad.no_grad():
            assert np.array_equal(model2.encode(probe).data, latent_before)
        assert np.array_equal(model2.tokenize(probe), tokens_before)


# -- 7 ----------------------------------------------------------------------------------


def test_criterion_7_variant_costs():
    with criterion(7, "variant cost ordering at the desk config", 1):
        desk = dict(causal=True, r_t=4, r_s=8, latent_channels=4, base_channels=32,
                    channel_multipliers=(1, 2, 2), blocks_per_stage=1)
        shape = (17, 3, 64, 64)
        cfg = {v: ModelConfig(**desk, variant=v) for v in Variant}
        flops = {v: count_flops(cfg[v], shape) for v in Variant}
        params = {v: count_params(cfg[v]) for v in Variant}
        print({v.value: (params[v], flops[v]) for v in Variant})
        assert flops[Variant.FULLY_3D] > flops[Variant.DECOUPLED_BLEND] > flops[Variant.DECOUPLED_NO_BLEND]
        assert params[Variant.DECOUPLED_NO_BLEND] < params[Variant.DECOUPLED_BLEND]


# -- 8 ----------------------------------------------------------------------------------


def test_criterion_8_codec(smoke, tmp_path, capsys):
    with criterion(8, "codec round trip and CLI encode/decode/eval", 60):
        rng = np.random.default_rng(8)
        for _ in range(1000):
            levels = tuple(int(v) for v in rng.integers(2, 10, size=rng.integers(1, 6)))
            shape = tuple(int(v) for v in rng.integers(1, 5, size=3))
            grid = rng.integers(0, int(np.prod(levels)), size=shape)
            raw = pack_tokens(grid, levels)
            header = 4 + 4 + 4 * len(levels) + 15
            bits = math.prod(shape) * sum(math.ceil(math.log2(L)) for L in levels)
            assert len(raw) - header == (bits + 7) // 8 == (payload_bits(shape, levels) + 7) // 8
            assert np.array_equal(unpack_tokens(raw).grid, grid)

        ckpt = save_checkpoint(smoke["fsq"]["result"].model, tmp_path / "smoke.vtck")
        clip = synth_batch(SynthConfig(resolution=16, clip_length=9, seed=77), 1)[0]
        write_raw_video(tmp_path / "clip.rvid", to_bytes(clip))
        assert cli(["encode", str(tmp_path / "clip.rvid"), "--checkpoint", str(ckpt), "-o", str(tmp_path / "c.vtok")]) == 0
        stream = unpack_tokens((tmp_path / "c.vtok").read_bytes())
        assert stream.grid.shape == (5, 4, 4)
        assert cli(["decode", str(tmp_path / "c.vtok"), "--checkpoint", str(ckpt), "-o", str(tmp_path / "r.rvid")]) == 0
        capsys.readouterr()
        assert cli(["eval", str(tmp_path / "clip.rvid"), str(tmp_path / "r.rvid"), "--rows"]) == 0
        rows = capsys.readouterr().out.strip().splitlines()
        assert rows[-1].startswith("mean,") and len(rows) == 11
        print("CLI eval mean PSNR/SSIM:", rows[-1])


# -- 9 ----------------------------------------------------------------------------------


def test_criterion_9_metrics():
    with criterion(9, "PSNR / SSIM unit cases", 1):
        x = np.random.default_rng(9).uniform(0, 0.9, size=(3, 16, 16))
        assert abs(psnr(x, x) - 100.0) <= 1e-6
        assert abs(ssim(x, x) - 1.0) <= 1e-6
        assert abs(psnr(x, x + 0.1) - 20.0) <= 1e-6
