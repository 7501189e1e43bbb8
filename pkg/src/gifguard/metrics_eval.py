# file: metrics_eval.py
"""
Image-quality and robustness metrics (PSNR, SSIM, pixel-domain VIF, BER, perceptual distance)
and the CSV / markdown report writer.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import torch
from scipy import ndimage

from .objectives import FeatureExtractor, PerceptualExtractor, feature_distance

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
REPORT_COLUMNS = ["method", "attack_kind", "attack_params", "n_samples", "metric", "value"]

SIGNAL_BLOCK = "Signal Degradation & Geometric Distortion"
DEEPFAKE_BLOCK = "Deepfake Attacks"
TEMPORAL_BLOCK = "Temporal Extras"
BLOCKS = {
    SIGNAL_BLOCK: ("identity", "g_blur", "g_noise", "salt_pepper", "median3d", "diff_jpeg",
                   "frame_drop", "random_crop"),
    DEEPFAKE_BLOCK: ("semantic_surrogate",),
    TEMPORAL_BLOCK: ("frame_shuffle", "frame_replace"),
}
LABELS = {
    "identity": "Identity",
    "g_blur": "G-Blur",
    "g_noise": "G-Noise",
    "salt_pepper": "Salt&Pep",
    "median3d": "Median",
    "diff_jpeg": "JPEG",
    "frame_drop": "Drop",
    "random_crop": "Crop",
    "frame_shuffle": "Shuffle",
    "frame_replace": "F-Repl",
}

ArrayLike = Union[np.ndarray, torch.Tensor]


def _as_array(x: ArrayLike) -> np.ndarray:
    if torch.is_tensor(x):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _planes(x: np.ndarray) -> List[np.ndarray]:
    """Split (H, W), (H, W, C) or (T, H, W, C) into 2D planes."""
    if x.ndim == 2:
        return [x]
    if x.ndim == 3:
        return [x[..., c] for c in range(x.shape[-1])]
    if x.ndim == 4:
        return [x[t, ..., c] for t in range(x.shape[0]) for c in range(x.shape[-1])]
    raise ValueError(f"expected 2-4 dimensional frames, got shape {x.shape}")


def psnr(a: ArrayLike, b: ArrayLike, max_val: float = 255.0, cap: float = PSNR_CAP) -> float:
    """PSNR over one pooled MSE; identical inputs report `cap`."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return cap
    return float(min(cap, 10.0 * np.log10(max_val ** 2 / mse)))


def _gaussian(x: np.ndarray, sigma: float, truncate: float = 4.0) -> np.ndarray:
    return ndimage.gaussian_filter(x, sigma, mode="reflect", truncate=truncate)


def _ssim_plane(a: np.ndarray, b: np.ndarray, max_val: float) -> float:
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2

    def blur(x):
        # sigma 1.5, truncate 3.5 -> 11x11 window
        return _gaussian(x, 1.5, truncate=3.5)

    mu1, mu2 = blur(a), blur(b)
    sigma1_sq = blur(a * a) - mu1 * mu1
    sigma2_sq = blur(b * b) - mu2 * mu2
    sigma12 = blur(a * b) - mu1 * mu2
    ssim_map = ((2 * mu1 * mu2 + c1) * (2 * sigma12 + c2)) / (
        (mu1 * mu1 + mu2 * mu2 + c1) * (sigma1_sq + sigma2_sq + c2)
    )
    return float(ssim_map.mean())


def ssim(a: ArrayLike, b: ArrayLike, max_val: float = 255.0) -> float:
    """Single-scale SSIM per frame and channel, averaged."""
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean([_ssim_plane(x, y, max_val) for x, y in zip(_planes(a), _planes(b))]))


def _vif_plane(ref: np.ndarray, dist: np.ndarray, sigma_nsq: float = 2.0,
               eps: float = 1e-10) -> Tuple[float, float]:
    num, den = 0.0, 0.0
    for scale in range(1, 5):
        sd = (2 ** (4 - scale + 1) + 1) / 5.0
        if scale > 1:
            ref = _gaussian(ref, sd)[::2, ::2]
            dist = _gaussian(dist, sd)[::2, ::2]
        mu1, mu2 = _gaussian(ref, sd), _gaussian(dist, sd)
        sigma1_sq = np.maximum(_gaussian(ref * ref, sd) - mu1 * mu1, 0.0)
        sigma2_sq = np.maximum(_gaussian(dist * dist, sd) - mu2 * mu2, 0.0)
        sigma12 = _gaussian(ref * dist, sd) - mu1 * mu2

        g = sigma12 / (sigma1_sq + eps)
        sv_sq = sigma2_sq - g * sigma12
        flat_ref = sigma1_sq < eps
        g[flat_ref] = 0
        sv_sq[flat_ref] = sigma2_sq[flat_ref]
        sigma1_sq[flat_ref] = 0
        flat_dist = sigma2_sq < eps
        g[flat_dist] = 0
        sv_sq[flat_dist] = 0
        negative = g < 0
        sv_sq[negative] = sigma2_sq[negative]
        g[negative] = 0
        sv_sq[sv_sq <= eps] = eps

        num += np.sum(np.log10(1 + g * g * sigma1_sq / (sv_sq + sigma_nsq)))
        den += np.sum(np.log10(1 + sigma1_sq / sigma_nsq))
    return num, den


def vif_p(a: ArrayLike, b: ArrayLike) -> float:
    """
    Pixel-domain VIF over a 4-level Gaussian pyramid, sigma_n^2 = 2, with `a` the reference.
    Information sums are pooled over all planes before the ratio; flat references give 1.0.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    num, den = 0.0, 0.0
    for x, y in zip(_planes(a), _planes(b)):
        n, d = _vif_plane(x, y)
        num, den = num + n, den + d
    if den == 0:
        return 1.0
    return float(num / den)


def ber(message: ArrayLike, decoded: ArrayLike) -> float:
    """Mean bit disagreement over every bit of every sample."""
    m, m_hat = _as_array(message), _as_array(decoded)
    if m.shape != m_hat.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {m_hat.shape}")
    if m.size == 0:
        raise ValueError("empty message")
    return float(np.mean(np.abs(np.round(m) - np.round(m_hat))))


_default_extractor: Optional[PerceptualExtractor] = None


def perceptual_distance(a: torch.Tensor, b: torch.Tensor,
                        phi: Optional[FeatureExtractor] = None) -> float:
    """Mean squared feature distance between two normalized clips, (3, T, H, W) or batched."""
    global _default_extractor
    if phi is None:
        if _default_extractor is None:
            _default_extractor = PerceptualExtractor()
        phi = _default_extractor
    if a.dim() == 4:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    with torch.no_grad():
        return float(feature_distance(phi, a.float(), b.float()))


# --- Reports ----------------------------------------------------------------------------------

def attack_label(kind: str, attack_params: str = "") -> str:
    if kind == "semantic_surrogate":
        fields = dict(p.partition("=")[::2] for p in attack_params.split(";") if p)
        return f"Surrogate-{fields.get('variant', 'ae4')}"
    return LABELS.get(kind, kind)


def _block_table(ber_rows: pd.DataFrame, kinds: Iterable[str]) -> Optional[pd.DataFrame]:
    rows = ber_rows[ber_rows["attack_kind"].isin(list(kinds))]
    if rows.empty:
        return None
    order = {k: i for i, k in enumerate(kinds)}
    rows = rows.assign(
        label=[attack_label(k, p) for k, p in zip(rows["attack_kind"], rows["attack_params"])],
        rank=rows["attack_kind"].map(order),
        percent=rows["value"] * 100.0,
    )
    labels = list(dict.fromkeys(rows.sort_values(["rank", "label"], kind="stable")["label"]))
    table = rows.pivot_table(index="method", columns="label", values="percent", aggfunc="mean")
    table = table[labels]
    table["Avg."] = table[labels].mean(axis=1)
    return table


def _markdown(table: pd.DataFrame, index_name: str, fmt: str) -> List[str]:
    header = [index_name] + [str(c) for c in table.columns]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for name, row in table.iterrows():
        cells = [fmt.format(v) if pd.notna(v) else "-" for v in row.tolist()]
        lines.append("| " + " | ".join([str(name)] + cells) + " |")
    return lines


def make_report(results: Union[pd.DataFrame, List[Dict]], out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Write report.csv (one row per method/attack/metric) and report.md (BER % per block with
    Avg. columns, fidelity tables, and the attack records needed to replay every number).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(results, columns=REPORT_COLUMNS)
    csv_path, md_path = out_dir / "report.csv", out_dir / "report.md"
    df.to_csv(csv_path, index=False)

    lines = ["# GIFGuard evaluation report", ""]
    ber_rows = df[df["metric"] == "ber"]
    for block, kinds in BLOCKS.items():
        table = _block_table(ber_rows, kinds)
        if table is None:
            continue
        lines += [f"## {block} (BER %)", ""] + _markdown(table, "Method", "{:.4f}") + [""]

    fidelity = df[(df["attack_kind"] == "none") & (df["metric"] != "ber")]
    if not fidelity.empty:
        table = fidelity.pivot_table(index="method", columns="metric", values="value")
        lines += ["## Watermark fidelity (cover vs watermarked)", ""]
        lines += _markdown(table, "Method", "{:.4f}") + [""]

    attacked = df[df["metric"].str.startswith("attack_")]
    if not attacked.empty:
        attacked = attacked.assign(
            label=[attack_label(k, p) for k, p in zip(attacked["attack_kind"], attacked["attack_params"])]
        )
        table = attacked.pivot_table(index="label", columns="metric", values="value", sort=False)
        lines += ["## Attack fidelity (watermarked vs attacked)", ""]
        lines += _markdown(table, "Attack", "{:.4f}") + [""]

    specs = [s for s in dict.fromkeys(df["attack_params"]) if isinstance(s, str) and s]
    if specs:
        lines += ["## Replay records", ""] + [f"- `{s}`" for s in specs] + [""]

    md_path.write_text("\n".join(lines).rstrip("\n") + "\n", encoding="utf-8")
    logger.info("Wrote report (%d rows) to %s", len(df), out_dir)
    return {"csv": csv_path, "markdown": md_path}
