"""
From pixels to a token file and back
====================================

A raw 8-bit clip is tokenized, written as a bit-packed token stream,
decoded and scored.  Each FSQ channel digit takes ceil(log2 L) bits, so a
5 x 8 x 8 grid with levels 8, 8, 8, 8 costs 5 * 8 * 8 * 12 bits.

The same steps are available from the shell:

    vidtok synth -o clip.rvid
    vidtok encode clip.rvid --checkpoint model.vtck -o clip.vtok
    vidtok decode clip.vtok --checkpoint model.vtck -o recon.rvid
    vidtok eval clip.rvid recon.rvid
"""

import tempfile
from pathlib import Path

from vidtok.codec import decode_file, encode_file, from_bytes, payload_bits, read_raw_video, to_bytes, unpack_tokens, write_raw_video
from vidtok.metrics import video_report
from vidtok.model import ModelConfig, VidTok, save_checkpoint
from vidtok.quantize import RegularizerConfig
from vidtok.synth import SynthConfig, synth_batch

work = Path(tempfile.mkdtemp())
cfg = ModelConfig(causal=True, r_t=4, r_s=8, latent_channels=4, base_channels=8,
                  channel_multipliers=(1, 1, 1), blocks_per_stage=1)
ckpt = save_checkpoint(VidTok(cfg, RegularizerConfig.fsq((8, 8, 8, 8)), seed=0), work / "model.vtck")

clip = synth_batch(SynthConfig(resolution=64, clip_length=17, seed=3))[0]
write_raw_video(work / "clip.rvid", to_bytes(clip))

tokens = encode_file(work / "clip.rvid", ckpt, work / "clip.vtok")
stream = unpack_tokens(tokens.read_bytes())
print(f"token grid {stream.grid.shape}, {tokens.stat().st_size} bytes on disk, "
      f"payload {payload_bits(stream.grid.shape, stream.levels) // 8} bytes")
print(f"raw clip {(work / 'clip.rvid').stat().st_size:,} bytes")

decode_file(tokens, ckpt, work / "recon.rvid")
report = video_report(from_bytes(read_raw_video(work / "clip.rvid")), from_bytes(read_raw_video(work / "recon.rvid")))
# the checkpoint is untrained, so expect a poor score; train one first for a real reconstruction
print(f"PSNR {report.psnr:.2f} dB, SSIM {report.ssim:.3f}")
