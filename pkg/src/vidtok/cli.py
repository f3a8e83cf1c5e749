"""Command-line entry point: ``vidtok {train,encode,decode,eval,info,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .codec import CodecError, decode_file, encode_file, from_bytes, read_raw_video, to_bytes, write_raw_video
from .metrics import video_report
from .model import ModelConfig, Variant, VidTok, count_flops, count_params, load_checkpoint
from .quantize import RegularizerConfig, utilization_rate
from .synth import SynthConfig, render_clip
from .train import TrainConfig, run_stage

log = logging.getLogger("vidtok")


def _levels(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace("x", ",").split(",") if v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad levels {text!r}") from exc


def _load_config(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    return json.loads(text)


def _model_config(base: dict, args) -> ModelConfig:
    d = dict(base)
    if getattr(args, "causal", None) is not None:
        d["causal"] = args.causal
    if getattr(args, "rt", None):
        d["r_t"] = args.rt
    if getattr(args, "rs", None):
        d["r_s"] = args.rs
    return ModelConfig.from_dict(d)


def _reg_config(base: dict | None, args, channels: int) -> RegularizerConfig:
    if getattr(args, "levels", None):
        extra = {k: v for k, v in (base or {}).items() if k not in ("kind", "levels", "latent_channels", "codebook_size")}
        return RegularizerConfig.fsq(args.levels, **extra)
    if base:
        return RegularizerConfig.from_dict(base)
    return RegularizerConfig.kl(channels)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--causal", dest="causal", action="store_true", default=None)
    p.add_argument("--no-causal", dest="causal", action="store_false")
    p.add_argument("--rt", type=int, help="temporal compression ratio")
    p.add_argument("--rs", type=int, help="spatial compression ratio")
    p.add_argument("--levels", type=_levels, help="FSQ levels, e.g. 8,8,8,8")


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    train = dict(cfg.get("train", {}))
    train["stage"] = args.stage
    if args.seed is not None:
        train["seed"] = args.seed
    if args.steps is not None:
        train["steps"] = args.steps
    if args.deterministic is not None:
        train["deterministic"] = args.deterministic
    tcfg = TrainConfig(**train)
    data = dict(cfg.get("data", {}))
    data.setdefault("seed", tcfg.seed)
    synth = SynthConfig.from_dict(data)

    model = None
    if args.stage == 1 and args.checkpoint is None:
        mcfg = _model_config(cfg.get("model", {}), args)
        rcfg = _reg_config(cfg.get("regularizer"), args, mcfg.latent_channels)
        if rcfg.channels != mcfg.latent_channels:
            mcfg = ModelConfig.from_dict({**mcfg.to_dict(), "latent_channels": rcfg.channels})
        model = VidTok(mcfg, rcfg, seed=tcfg.seed)
    result = run_stage(tcfg, synth, model=model, checkpoint=args.checkpoint, out_path=args.out, curve_path=args.curve)
    last = result.curve[-1]
    print(f"stage {tcfg.stage}: {tcfg.steps} steps, final loss {last['loss']:.5f}, "
          f"reconstruction {last['reconstruction']:.5f} -> {args.out}")
    return 0


def cmd_encode(args) -> int:
    out = encode_file(args.video, args.checkpoint, args.out, output=args.format)
    print(f"wrote {out} ({out.stat().st_size} bytes)")
    return 0


def cmd_decode(args) -> int:
    out = decode_file(args.stream, args.checkpoint, args.out)
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    reference = read_raw_video(args.reference)
    utilization = None
    if args.reconstruction is not None:
        other = read_raw_video(args.reconstruction)
    elif args.checkpoint is not None:
        model, _ = load_checkpoint(args.checkpoint)
        video = from_bytes(reference)[None]
        with ad.no_grad():
            recon, result = model.forward(video, train=False)
        other = to_bytes(recon.data[0])
        if result.usage is not None:
            utilization = utilization_rate(result.usage)
    else:
        raise CodecError("eval needs a second video or --checkpoint")
    report = video_report(from_bytes(reference), from_bytes(other), utilization,
                          {"reference": str(args.reference)})
    print(report.to_rows() if args.rows else report.to_table())
    return 0


def cmd_info(args) -> int:
    base = _load_config(args.config).get("model", {})
    frames = args.frames
    rows = []
    for variant in Variant:
        mcfg = _model_config({**base, "variant": variant.value}, args)
        rcfg = _reg_config(None, args, mcfg.latent_channels)
        if rcfg.channels != mcfg.latent_channels:
            mcfg = ModelConfig.from_dict({**mcfg.to_dict(), "latent_channels": rcfg.channels})
        if frames is None:
            frames = 4 * mcfg.r_t + (1 if mcfg.causal else 0)
        shape = (frames, 3, args.size, args.size)
        rows.append((variant.value, count_params(mcfg, rcfg), count_flops(mcfg, shape, rcfg)))
    print(f"input {frames}x3x{args.size}x{args.size}")
    print(f"{'variant':<18}{'params':>12}{'FLOPs':>18}")
    for name, params, flops in rows:
        print(f"{name:<18}{params:>12,}{flops:>18,}")
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(resolution=args.size, clip_length=args.frames, source_fps=args.source_fps,
                      sample_fps=args.sample_fps, seed=args.seed)
    clip, _ = render_clip(cfg, np.random.default_rng([cfg.seed, 0]))
    write_raw_video(args.out, to_bytes(clip))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidtok", description="Causal video tokenizer toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training stage")
    p.add_argument("--config", help="JSON file with model/regularizer/train/data sections")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--checkpoint", help="input checkpoint (required for stage 2)")
    p.add_argument("--out", "-o", required=True, help="output checkpoint")
    p.add_argument("--curve", help="write the loss curve as CSV")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    p.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="raw video -> token stream (or latent container)")
    p.add_argument("video")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--format", choices=("auto", "tokens", "latent"), default="auto")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="token stream or latent container -> raw video")
    p.add_argument("stream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="PSNR / SSIM between two raw videos or through a checkpoint")
    p.add_argument("reference")
    p.add_argument("reconstruction", nargs="?")
    p.add_argument("--checkpoint")
    p.add_argument("--rows", action="store_true", help="machine-readable CSV output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="parameter and FLOP counts of the four architecture variants")
    p.add_argument("--config")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--frames", type=int)
    _add_model_flags(p)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("synth", help="render one synthetic clip as a raw video")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--frames", type=int, default=17)
    p.add_argument("--source-fps", type=int, default=24)
    p.add_argument("--sample-fps", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", help="accepted for symmetry; rendering is always seeded")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
