# file: cli.py
"""
Command-line entry point: `gifguard <command> ...`.

Commands: build-dataset, train, embed, extract, attack, evaluate. Every command returns 0 on
success; library errors become a one-line `gifguard: error: ...` on stderr and exit code 1.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data_pipeline import (
    build_dataset,
    denormalize,
    load_manifest,
    message_from_hex,
    message_to_hex,
    normalize,
    random_messages,
)
from .errors import GifGuardError
from .gif_codec import IndexedGif, gif_read, gif_write
from .rds import DistortionSpec, apply_distortion
from .training_harness import TrainConfig, evaluate, load_models, train

logger = logging.getLogger("gifguard")

SEED_ENV = "GIFGUARD_SEED"


def resolve_seed(value: Optional[int]) -> Optional[int]:
    """--seed wins, then $GIFGUARD_SEED; None when neither is set."""
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is None or not env.strip():
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise ValueError(f"{SEED_ENV} must be an integer, got '{env}'") from exc


def _seed(args) -> int:
    seed = resolve_seed(args.seed)
    return 0 if seed is None else seed


def _read_clip(path):
    gif = gif_read(path)
    return gif, gif.to_frames()


def _write_clip(frames: np.ndarray, like: IndexedGif, path) -> Path:
    out = IndexedGif.from_frames(frames, frame_delay_ms=like.frame_delay_ms,
                                 loop_flag=like.loop_flag)
    return gif_write(out, path)


# --- Commands ---------------------------------------------------------------------------------

def cmd_build_dataset(args) -> int:
    manifest = build_dataset(
        args.n_train, args.n_val, args.n_test, args.out, seed=_seed(args), frames=args.frames,
        height=args.height, width=args.width, overwrite=args.overwrite, workers=args.workers,
    )
    counts = load_manifest(manifest)["split"].value_counts()
    print(f"manifest: {manifest}")
    for split in ("train", "val", "test"):
        print(f"{split}: {int(counts.get(split, 0))}")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config)
    updates = {}
    seed = resolve_seed(args.seed)
    if seed is not None:
        updates["seed"] = seed
    if args.manifest:
        updates["manifest"] = str(args.manifest)
    if args.device:
        updates["device"] = args.device
    if updates:
        cfg = TrainConfig.from_flat({**cfg.to_flat(), **updates})
    checkpoint = train(cfg, args.out, resume=args.resume)
    print(f"checkpoint: {checkpoint}")
    return 0


def _print_bits(bits: torch.Tensor):
    # hex only when the payload splits into whole nibbles
    if len(bits) % 4 == 0:
        print(f"message: {message_to_hex(bits)}")
    print("bits: " + "".join(str(int(b)) for b in bits.tolist()))


def cmd_embed(args) -> int:
    models = load_models(args.ckpt)
    gif, frames = _read_clip(args.input)
    models.decoder.check_dims(frames.shape[:3])
    payload_len = models.encoder.cfg.payload_len
    if args.message == "random":
        gen = torch.Generator().manual_seed(_seed(args))
        message = random_messages(1, payload_len, gen)[0]
    else:
        message = message_from_hex(args.message, payload_len)
    with torch.no_grad():
        g_w = models.encoder(normalize(frames)[None], message[None])
    path = _write_clip(denormalize(g_w[0]), gif, args.out)
    _print_bits(message)
    print(f"wrote: {path}")
    return 0


def cmd_extract(args) -> int:
    models = load_models(args.ckpt)
    _, frames = _read_clip(args.input)
    models.decoder.check_dims(frames.shape[:3])
    with torch.no_grad():
        logits, bits = models.decoder.decode(normalize(frames)[None])
    _print_bits(bits[0])
    print("confidence: " + " ".join(f"{p:.4f}" for p in torch.sigmoid(logits[0]).tolist()))
    return 0


def _attack_spec(args) -> DistortionSpec:
    params = {}
    if args.params:
        params.update(DistortionSpec.parse(f"kind={args.kind};{args.params}").params)
    if args.quality is not None:
        params["quality"] = args.quality
    return DistortionSpec(args.kind, params, _seed(args))


def cmd_attack(args) -> int:
    spec = _attack_spec(args)
    surrogates = load_models(args.ckpt).surrogates if args.ckpt else None
    gif, frames = _read_clip(args.input)
    with torch.no_grad():
        result = apply_distortion(normalize(frames), spec, surrogates)
    path = _write_clip(denormalize(result.output), gif, args.out)
    print(f"spec: {spec.serialize()}")
    if "warning" in result.metadata:
        print(f"warning: {result.metadata['warning']}")
    print(f"wrote: {path}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = args.manifest or load_models(args.ckpt).config.manifest
    if not manifest:
        raise ValueError("no manifest given and none recorded in the checkpoint")
    attacks = [a.strip() for a in args.attacks.split(",") if a.strip()] if args.attacks else None
    report = evaluate(args.ckpt, manifest, split=args.split, attacks=attacks, out_dir=args.out,
                      seed=_seed(args), batch_size=args.batch_size, gif_path=not args.no_gif)
    ber_rows = report[report["metric"] == "ber"]
    print(f"report: {Path(args.out) / 'report.md'}")
    print(f"mean BER: {ber_rows['value'].mean():.6f} over {len(ber_rows)} attack rows")
    return 0


# --- Parser -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gifguard", description="GIF watermarking toolkit.")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def seeded(sub):
        sub.add_argument("--seed", type=int, default=None,
                         help=f"random seed (default: ${SEED_ENV}, else 0)")
        return sub

    p = seeded(commands.add_parser("build-dataset", help="render the synthetic dataset"))
    p.add_argument("--n-train", type=int, default=10)
    p.add_argument("--n-val", type=int, default=3)
    p.add_argument("--n-test", type=int, default=3)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_build_dataset)

    p = seeded(commands.add_parser("train", help="train encoder and decoder"))
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--resume", type=Path, default=None)
    p.add_argument("--manifest", type=Path, default=None, help="override the config's manifest")
    p.add_argument("--device", default=None)
    p.set_defaults(func=cmd_train)

    p = seeded(commands.add_parser("embed", help="watermark a GIF"))
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--message", default="random", help="hex payload or 'random'")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_embed)

    p = commands.add_parser("extract", help="decode the payload of a GIF")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.set_defaults(func=cmd_extract, seed=None)

    p = seeded(commands.add_parser("attack", help="apply one distortion to a GIF"))
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--kind", required=True)
    p.add_argument("--params", default="", help="'name=value;name=value'")
    p.add_argument("--quality", type=int, default=None, help="JPEG quality shortcut")
    p.add_argument("--ckpt", type=Path, default=None, help="checkpoint holding the surrogates")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_attack)

    p = seeded(commands.add_parser("evaluate", help="score a checkpoint against attacks"))
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--attacks", default=None, help="comma-separated kinds (default: all)")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--no-gif", action="store_true", help="skip the true-GIF recompression path")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (GifGuardError, ValueError, OSError) as exc:
        logger.debug("command failed", exc_info=True)
        print(f"gifguard: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
