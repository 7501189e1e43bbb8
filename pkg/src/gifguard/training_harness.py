# file: training_harness.py
"""
Joint training of encoder, decoder and discriminator under the distortion curriculum, with
self-describing checkpoints, an append-only CSV step log, and the evaluation protocol that
turns a checkpoint into an EvalReport.
"""

import csv
import json
import logging
import math
import os
import random
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from torch.utils.data import DataLoader, RandomSampler
from tqdm import tqdm

from .data_pipeline import GifClipDataset, denormalize, random_messages
from .dird_decoder import DecoderConfig, DirdDecoder, logits_to_bits
from .errors import CheckpointError, ConfigError, NonFiniteLoss
from .gif_codec import gif_quantize_roundtrip
from .metrics_eval import ber, make_report, perceptual_distance, psnr, ssim, vif_p, REPORT_COLUMNS
from .objectives import (
    Discriminator,
    LossParts,
    LossWeights,
    PerceptualExtractor,
    adversarial_losses,
    imperceptibility_loss,
    lambda_msg,
    message_loss,
    total_loss,
)
from .rds import (
    CurriculumSchedule,
    DistortionSpec,
    SemanticSurrogate,
    StageInfo,
    apply_distortion,
    fit_surrogate,
    sample_spec,
)
from .stare_encoder import EncoderConfig, StareEncoder

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_COLUMNS = ["epoch", "step", "stage", "kind", "L_imp", "L_adv", "L_msg", "lambda_msg", "ber",
               "psnr"]
LOSS_KEYS = ("lambda_adv", "lambda_msg_start", "lambda_msg_end", "beta")
CURRICULUM_KEYS = {
    "curriculum_mode": "mode",
    "stage_fractions": "stage_fractions",
    "climb_probabilities": "climb_probabilities",
}

# settings a resumed run may change without altering what it replays
RESUME_FREE_KEYS = {"manifest", "device", "num_workers", "plot", "surrogate_path",
                    "surrogate_fit_steps"}

PathLike = Union[str, Path]


class TrainConfig(BaseModel):
    """Everything a run needs. Stored on disk as a flat JSON object (see `from_file`)."""

    model_config = ConfigDict(extra="forbid")

    manifest: Optional[str] = None
    total_epochs: int = Field(20, ge=1)
    steps_per_epoch: int = Field(100, ge=1)
    batch_size: int = Field(4, ge=1)
    learning_rate: float = Field(1e-4, gt=0)
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    payload_len: int = Field(32, ge=1)
    frames: int = Field(10, ge=1)
    height: int = Field(64, ge=8)
    width: int = Field(64, ge=8)
    seed: int = 0
    alpha: float = Field(0.05, ge=0)
    base_channels: int = Field(16, ge=1)
    depth: int = Field(2, ge=1)
    use_se: bool = True
    head_mode: Literal["adaptive_flat", "global_pool", "grid_interp"] = "adaptive_flat"
    curriculum: CurriculumSchedule = Field(default_factory=CurriculumSchedule)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    num_workers: int = Field(0, ge=0)
    device: str = "cpu"
    surrogate_fit_steps: int = Field(300, ge=0)
    surrogate_bottlenecks: Tuple[int, ...] = (4, 8)
    surrogate_path: Optional[str] = None
    deterministic: bool = True
    plot: bool = True

    @model_validator(mode="after")
    def _sync_curriculum(self):
        if self.curriculum.total_epochs != self.total_epochs:
            self.curriculum = self.curriculum.model_copy(update={"total_epochs": self.total_epochs})
        return self

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.frames, self.height, self.width)

    @classmethod
    def from_flat(cls, data: Dict) -> "TrainConfig":
        data = dict(data)
        weights = {k: data.pop(k) for k in LOSS_KEYS if k in data}
        curriculum = {v: data.pop(k) for k, v in CURRICULUM_KEYS.items() if k in data}
        try:
            if weights:
                data["loss_weights"] = LossWeights(**weights)
            if curriculum:
                curriculum["total_epochs"] = data.get("total_epochs", 20)
                data["curriculum"] = CurriculumSchedule(**curriculum)
            return cls(**data)
        except ValidationError as exc:
            raise ConfigError(f"invalid training config: {exc}") from exc

    @classmethod
    def from_file(cls, path: PathLike) -> "TrainConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        return cls.from_flat(data)

    def to_flat(self) -> Dict:
        data = self.model_dump(exclude={"curriculum", "loss_weights"})
        data.update(self.loss_weights.model_dump())
        data["curriculum_mode"] = self.curriculum.mode
        data["stage_fractions"] = list(self.curriculum.stage_fractions)
        data["climb_probabilities"] = list(self.curriculum.climb_probabilities)
        data["adam_betas"] = list(self.adam_betas)
        data["surrogate_bottlenecks"] = list(self.surrogate_bottlenecks)
        return data

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            payload_len=self.payload_len, base_channels=self.base_channels, depth=self.depth,
            alpha=self.alpha, use_se=self.use_se, frames=self.frames, height=self.height,
            width=self.width,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            payload_len=self.payload_len, head_mode=self.head_mode, use_se=self.use_se,
            frames=self.frames, height=self.height, width=self.width,
        )


def stage_for_epoch(epoch: int, cfg: TrainConfig) -> StageInfo:
    return cfg.curriculum.describe(epoch)


def step_progress(epoch: int, step: int, steps_per_epoch: int) -> float:
    """Fractional epochs completed before `step` (both 1-based) starts."""
    return (epoch - 1) + (step - 1) / steps_per_epoch


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


@contextmanager
def deterministic_algorithms(enabled: bool = True):
    """Switch torch to deterministic kernels for the duration of the block, then restore."""
    if not enabled:
        yield
        return
    previous = (torch.are_deterministic_algorithms_enabled(),
                torch.is_deterministic_algorithms_warn_only_enabled(),
                torch.backends.cudnn.benchmark)
    os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(True, warn_only=True)
    torch.backends.cudnn.benchmark = False
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous[0], warn_only=previous[1])
        torch.backends.cudnn.benchmark = previous[2]


# --- Checkpoints ------------------------------------------------------------------------------

@dataclass
class LoadedModels:
    encoder: StareEncoder
    decoder: DirdDecoder
    surrogates: Dict[str, SemanticSurrogate]
    config: TrainConfig
    epoch: int


def save_checkpoint(path: PathLike, cfg: TrainConfig, epoch: int, encoder: StareEncoder,
                    decoder: DirdDecoder, disc: Discriminator,
                    surrogates: Dict[str, SemanticSurrogate],
                    optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None) -> Path:
    path = Path(path)
    state = {
        "format_version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "train_config": cfg.to_flat(),
        "encoder_config": encoder.cfg.to_dict(),
        "decoder_config": decoder.cfg.to_dict(),
        "loss_weights": cfg.loss_weights.model_dump(),
        "encoder": encoder.state_dict(),
        "decoder": decoder.state_dict(),
        "discriminator": disc.state_dict(),
        "surrogates": {
            name: {"bottleneck": s.bottleneck, "state": s.state_dict()}
            for name, s in surrogates.items()
        },
        "optimizers": {k: o.state_dict() for k, o in (optimizers or {}).items()},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path: PathLike, map_location="cpu") -> Dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        state = torch.load(path, map_location=map_location, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(state, dict) or state.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    return state


def _load_surrogates(entries: Dict, device) -> Dict[str, SemanticSurrogate]:
    surrogates = {}
    for name, entry in entries.items():
        model = SemanticSurrogate(int(entry["bottleneck"]))
        model.load_state_dict(entry["state"])
        surrogates[name] = model.to(device).freeze()
    return surrogates


def load_models(path: PathLike, device="cpu",
                dims: Optional[Sequence[int]] = None) -> LoadedModels:
    """Rebuild encoder, decoder and surrogates; the decoder keeps its stored profile."""
    state = load_checkpoint(path)
    enc_cfg = dict(state["encoder_config"])
    enc_cfg["message_seed_shape"] = tuple(enc_cfg["message_seed_shape"])
    encoder = StareEncoder(EncoderConfig(**enc_cfg))
    decoder = DirdDecoder(DecoderConfig(**state["decoder_config"]))
    try:
        encoder.load_state_dict(state["encoder"])
        decoder.load_state_dict(state["decoder"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match the stored configs") from exc
    if dims is not None:
        decoder.check_dims(dims)
    encoder.to(device).eval()
    decoder.to(device).eval()
    return LoadedModels(encoder, decoder, _load_surrogates(state["surrogates"], device),
                        TrainConfig.from_flat(state["train_config"]), int(state["epoch"]))


# --- TrainLog ---------------------------------------------------------------------------------

def load_train_log(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def _truncate_log(path: Path, last_epoch: int):
    """Drop records written after `last_epoch`, keeping the surviving lines byte-for-byte."""
    if not path.exists():
        return
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    kept = rows[:1] + [r for r in rows[1:] if r and int(r[0]) <= last_epoch]
    with open(path, "w", newline="") as handle:
        csv.writer(handle).writerows(kept)


def plot_convergence(log_path: PathLike, out_path: PathLike) -> Optional[Path]:
    """PSNR and BER against global step, smoothed over a window of 20 steps."""
    if plt is None:
        logger.warning("matplotlib is not installed; skipping convergence plot.")
        return None
    log = load_train_log(log_path)
    if log.empty:
        return None
    steps = np.arange(1, len(log) + 1)
    fig, (ax_psnr, ax_ber) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_psnr.plot(steps, log["psnr"].rolling(20, min_periods=1).mean())
    ax_psnr.set_ylabel("PSNR (dB)")
    ax_ber.plot(steps, log["ber"].rolling(20, min_periods=1).mean())
    ax_ber.set_ylabel("BER")
    ax_ber.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


# --- Training ---------------------------------------------------------------------------------

def _fit_surrogates(cfg: TrainConfig, dataset: GifClipDataset,
                    device) -> Dict[str, SemanticSurrogate]:
    if cfg.surrogate_path:
        entries = torch.load(cfg.surrogate_path, map_location="cpu", weights_only=True)
        logger.info("Loaded surrogates %s from %s", sorted(entries), cfg.surrogate_path)
        return _load_surrogates(entries, device)
    clips = [dataset[i] for i in range(len(dataset))]
    surrogates = {}
    for bottleneck in cfg.surrogate_bottlenecks:
        torch.manual_seed(derive_seed(cfg.seed, 7919, bottleneck))
        model = SemanticSurrogate(bottleneck).to(device)
        fit_surrogate(model, clips, steps=cfg.surrogate_fit_steps,
                      seed=derive_seed(cfg.seed, 7907, bottleneck))
        surrogates[model.name] = model
    return surrogates


def train(cfg: TrainConfig, out_dir: PathLike, resume: Optional[PathLike] = None) -> Path:
    """
    Run the curriculum and return the path of `final.pt`. The step log goes to
    `train_log.csv`; stage checkpoints to `stage<k>.pt`. Resuming restarts at the epoch after
    the checkpoint and replays exactly what an uninterrupted run would have done.
    """
    if cfg.manifest is None:
        raise ConfigError("no dataset manifest configured")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True))
    with deterministic_algorithms(cfg.deterministic):
        return _train(cfg, out_dir, resume)


def _train(cfg: TrainConfig, out_dir: Path, resume: Optional[PathLike]) -> Path:
    device = torch.device(cfg.device)
    seed_everything(cfg.seed)

    dataset = GifClipDataset(cfg.manifest, "train", cfg.dims)
    encoder = StareEncoder(cfg.encoder_config()).to(device)
    decoder = DirdDecoder(cfg.decoder_config()).to(device)
    disc = Discriminator().to(device)
    phi = PerceptualExtractor().to(device)
    optimizer = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()),
        lr=cfg.learning_rate, betas=tuple(cfg.adam_betas),
    )
    disc_optimizer = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate,
                                      betas=tuple(cfg.adam_betas))

    log_path = out_dir / "train_log.csv"
    start_epoch = 1
    if resume is not None:
        state = load_checkpoint(resume, map_location=device)
        saved = TrainConfig.from_flat(state["train_config"])
        if saved.model_dump(exclude=RESUME_FREE_KEYS) != cfg.model_dump(exclude=RESUME_FREE_KEYS):
            raise CheckpointError("resume checkpoint was written with a different config")
        encoder.load_state_dict(state["encoder"])
        decoder.load_state_dict(state["decoder"])
        disc.load_state_dict(state["discriminator"])
        optimizer.load_state_dict(state["optimizers"]["generator"])
        disc_optimizer.load_state_dict(state["optimizers"]["discriminator"])
        surrogates = _load_surrogates(state["surrogates"], device)
        start_epoch = int(state["epoch"]) + 1
        _truncate_log(log_path, start_epoch - 1)
        logger.info("Resuming from %s at epoch %d", resume, start_epoch)
    else:
        log_path.unlink(missing_ok=True)
        needs_surrogate = "semantic_surrogate" in cfg.curriculum.hard_kinds
        surrogates = _fit_surrogates(cfg, dataset, device) if needs_surrogate else {}

    optimizers = {"generator": optimizer, "discriminator": disc_optimizer}
    stage_ends = cfg.curriculum.stage_ends()
    weights = cfg.loss_weights
    steps = cfg.steps_per_epoch
    prev_stage = None

    with open(log_path, "a", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=LOG_COLUMNS)
        if handle.tell() == 0:
            writer.writeheader()

        for epoch in range(start_epoch, cfg.total_epochs + 1):
            info = stage_for_epoch(epoch, cfg)
            if info.stage != prev_stage:
                logger.info("Epoch %d: stage %d, hard-attack probability %.2f",
                            epoch, info.stage, info.climb_probability)
                prev_stage = info.stage

            torch.manual_seed(derive_seed(cfg.seed, epoch, 0))
            data_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, epoch, 1))
            msg_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, epoch, 2))
            spec_rng = np.random.default_rng(derive_seed(cfg.seed, epoch, 3))
            sampler = RandomSampler(dataset, replacement=True,
                                    num_samples=steps * cfg.batch_size, generator=data_gen)
            loader = DataLoader(dataset, batch_size=cfg.batch_size, sampler=sampler,
                                num_workers=cfg.num_workers, drop_last=True)

            encoder.train()
            decoder.train()
            disc.train()
            records = []
            for step, g_co in enumerate(tqdm(loader, desc=f"epoch {epoch}", leave=False), 1):
                g_co = g_co.to(device)
                message = random_messages(g_co.shape[0], cfg.payload_len, msg_gen).to(device)
                spec = sample_spec(cfg.curriculum, epoch, spec_rng)

                g_w = encoder(g_co, message)
                attacked = apply_distortion(g_w, spec, surrogates).output
                logits = decoder(attacked)
                l_imp = imperceptibility_loss(g_co, g_w, phi, weights.beta)
                l_adv, d_loss = adversarial_losses(disc, g_co, g_w)
                l_msg = message_loss(message, logits)
                progress = step_progress(epoch, step, steps)
                loss = total_loss(LossParts(l_imp, l_adv, l_msg), weights, progress,
                                  cfg.total_epochs)

                record = {
                    "epoch": epoch,
                    "step": step,
                    "stage": info.stage,
                    "kind": spec.kind,
                    "L_imp": float(l_imp),
                    "L_adv": float(l_adv),
                    "L_msg": float(l_msg),
                    "lambda_msg": lambda_msg(weights, progress, cfg.total_epochs),
                    "ber": ber(message, logits_to_bits(logits)),
                    "psnr": psnr(g_co.detach(), g_w.detach(), max_val=2.0),
                }
                if not math.isfinite(float(loss)):
                    writer.writerow(record)
                    raise NonFiniteLoss(record)

                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

                disc_optimizer.zero_grad()
                d_loss.backward()
                disc_optimizer.step()

                writer.writerow(record)
                records.append(record)
            handle.flush()

            summary = pd.DataFrame(records)
            logger.info(
                "Epoch %d/%d stage %d: L_imp %.5f L_adv %.4f L_msg %.4f BER %.4f PSNR %.2f",
                epoch, cfg.total_epochs, info.stage, summary["L_imp"].mean(),
                summary["L_adv"].mean(), summary["L_msg"].mean(), summary["ber"].mean(),
                summary["psnr"].mean(),
            )
            if epoch in stage_ends[:3] and epoch < cfg.total_epochs:
                save_checkpoint(out_dir / f"stage{info.stage}.pt", cfg, epoch, encoder, decoder,
                                disc, surrogates, optimizers)

    final = save_checkpoint(out_dir / "final.pt", cfg, cfg.total_epochs, encoder, decoder, disc,
                            surrogates, optimizers)
    if cfg.plot:
        plot_convergence(log_path, out_dir / "convergence.png")
    logger.info("Training finished; checkpoint at %s", final)
    return final


# --- Evaluation -------------------------------------------------------------------------------

DEFAULT_EVAL_ATTACKS = (
    "identity", "g_blur", "g_noise", "salt_pepper", "median3d", "diff_jpeg", "frame_drop",
    "random_crop", "semantic_surrogate:ae4", "semantic_surrogate:ae8", "frame_shuffle",
    "frame_replace",
)


def attack_specs(attacks: Sequence[Union[str, DistortionSpec]], seed: int) -> List[DistortionSpec]:
    """Turn names (`kind`, CLI alias, or `semantic_surrogate:<variant>`) into seeded specs."""
    specs = []
    for index, attack in enumerate(attacks):
        if isinstance(attack, DistortionSpec):
            specs.append(attack)
            continue
        name, _, variant = attack.partition(":")
        params = {"variant": variant} if variant else {}
        specs.append(DistortionSpec(name, params, derive_seed(seed, 104729, index)))
    return specs


def _with_seed(spec: DistortionSpec, batch_index: int) -> DistortionSpec:
    return DistortionSpec(spec.kind, spec.params, derive_seed(spec.seed, batch_index))


def evaluate(checkpoint: PathLike, manifest: PathLike, split: str = "test",
             attacks: Optional[Sequence[Union[str, DistortionSpec]]] = None,
             out_dir: Optional[PathLike] = None, seed: int = 0, batch_size: int = 4,
             gif_path: bool = True, device="cpu") -> pd.DataFrame:
    """
    Embed fresh messages into every clip of `split`, attack, decode and score.

    Two paths are reported: method "raw" attacks the watermarked tensor directly; method
    "gif" quantizes to a real GIF before and after the attack. Rows follow REPORT_COLUMNS.
    """
    with deterministic_algorithms():
        return _evaluate(checkpoint, manifest, split, attacks, out_dir, seed, batch_size,
                         gif_path, device)


def _evaluate(checkpoint, manifest, split, attacks, out_dir, seed, batch_size, gif_path,
              device) -> pd.DataFrame:
    models = load_models(checkpoint, device)
    cfg = models.config
    dataset = GifClipDataset(manifest, split, cfg.dims)
    models.decoder.check_dims(cfg.dims)
    specs = attack_specs(attacks or DEFAULT_EVAL_ATTACKS, seed)
    methods = ("raw", "gif") if gif_path else ("raw",)

    bits = {(m, i): [] for m in methods for i in range(len(specs))}
    fidelity = {k: [] for k in ("psnr", "ssim", "vif", "perceptual")}
    attack_fidelity = {(i, k): [] for i in range(len(specs)) for k in ("psnr", "ssim", "vif")}

    n = len(dataset)
    with torch.no_grad():
        for batch_index, start in enumerate(tqdm(range(0, n, batch_size), desc="evaluate")):
            g_co = torch.stack([dataset[i] for i in range(start, min(n, start + batch_size))])
            g_co = g_co.to(device)
            gen = torch.Generator().manual_seed(derive_seed(seed, batch_index))
            message = random_messages(g_co.shape[0], cfg.payload_len, gen).to(device)
            g_w = models.encoder(g_co, message)
            covers, marked = denormalize(g_co), denormalize(g_w)

            for c, w, x, y in zip(covers, marked, g_co, g_w):
                fidelity["psnr"].append(psnr(c, w))
                fidelity["ssim"].append(ssim(c, w))
                fidelity["vif"].append(vif_p(c, w))
                fidelity["perceptual"].append(perceptual_distance(x.cpu(), y.cpu()))

            g_w_gif = gif_quantize_roundtrip(g_w) if gif_path else None
            for i, base in enumerate(specs):
                spec = _with_seed(base, batch_index)
                attacked = apply_distortion(g_w, spec, models.surrogates).output
                _, decoded = models.decoder.decode(attacked)
                bits["raw", i].append((message.cpu(), decoded.cpu()))
                for w, a in zip(marked, denormalize(attacked)):
                    attack_fidelity[i, "psnr"].append(psnr(w, a))
                    attack_fidelity[i, "ssim"].append(ssim(w, a))
                    attack_fidelity[i, "vif"].append(vif_p(w, a))
                if gif_path:
                    attacked = apply_distortion(g_w_gif, spec, models.surrogates).output
                    _, decoded = models.decoder.decode(gif_quantize_roundtrip(attacked))
                    bits["gif", i].append((message.cpu(), decoded.cpu()))

    rows = []
    for name, values in fidelity.items():
        rows.append(["raw", "none", "", n, name, float(np.mean(values))])
    for i, spec in enumerate(specs):
        params = spec.serialize()
        for method in methods:
            sent = torch.cat([m for m, _ in bits[method, i]])
            got = torch.cat([d for _, d in bits[method, i]])
            rows.append([method, spec.kind, params, n, "ber", ber(sent, got)])
        for name in ("psnr", "ssim", "vif"):
            values = attack_fidelity[i, name]
            rows.append(["raw", spec.kind, params, n, f"attack_{name}", float(np.mean(values))])

    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    if out_dir is not None:
        make_report(report, out_dir)
    return report
