"""RGB PSNR/SSIM metrics, tiled inference, and per-category reporting.

PSNR pools the squared error over all three channels jointly; SSIM uses
the canonical 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03) per
channel, averaged over RGB.  Reports aggregate per-image metrics into
per-category means and an unweighted category average.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .dataset import DatasetManifest
from . import ioutils

PSNR_DISPLAY_CAP = 100.0
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE); math.inf when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window() -> np.ndarray:
    half = _SSIM_WIN // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * _SSIM_SIGMA**2))
    return g / g.sum()


def _filter_valid(plane: np.ndarray, kernel1d: np.ndarray) -> np.ndarray:
    half = _SSIM_WIN // 2
    out = correlate1d(plane, kernel1d, axis=0, mode="constant")
    out = correlate1d(out, kernel1d, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity over RGB channels.

    Gaussian-weighted local statistics, stability constants
    C1 = (0.01*peak)^2 and C2 = (0.03*peak)^2; border pixels whose window
    leaves the image are excluded.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < _SSIM_WIN:
        raise ValueError(f"image {a.shape[:2]} smaller than {_SSIM_WIN}x{_SSIM_WIN} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = _gaussian_window()
    scores = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mu_x = _filter_valid(x, g)
        mu_y = _filter_valid(y, g)
        var_x = _filter_valid(x * x, g) - mu_x**2
        var_y = _filter_valid(y * y, g) - mu_y**2
        cov = _filter_valid(x * y, g) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def _feather_profile(n: int, overlap: int) -> np.ndarray:
    w = np.ones(n)
    ramp = (np.arange(overlap) + 1.0) / (overlap + 1.0)
    if overlap > 0 and n >= 2 * overlap:
        w[:overlap] = ramp
        w[-overlap:] = ramp[::-1]
    return w


def _tile_starts(dim: int, tile: int, overlap: int) -> list:
    if tile >= dim:
        return [0]
    stride = tile - overlap
    starts = list(range(0, dim - tile, stride))
    starts.append(dim - tile)
    return sorted(set(starts))


def tile_restore(restore_fn, image: np.ndarray, tile: int, overlap: int) -> np.ndarray:
    """Apply ``restore_fn`` over overlapping tiles and blend the results.

    Linear feathering weights are accumulated and normalised, so they form
    a partition of unity: an identity restore_fn reproduces the input
    regardless of tiling.
    """
    if overlap < 0 or tile <= 2 * overlap:
        raise ValueError(f"need tile > 2*overlap >= 0, got tile={tile}, overlap={overlap}")
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if tile >= h and tile >= w:
        out = np.asarray(restore_fn(image), dtype=np.float64)
        if out.shape != image.shape:
            raise ValueError(f"restore_fn changed shape {image.shape} -> {out.shape}")
        return out
    th, tw = min(tile, h), min(tile, w)
    acc = np.zeros_like(image)
    wsum = np.zeros((h, w, 1))
    weight = np.outer(_feather_profile(th, overlap), _feather_profile(tw, overlap))[..., None]
    for y0 in _tile_starts(h, th, overlap):
        for x0 in _tile_starts(w, tw, overlap):
            patch = image[y0 : y0 + th, x0 : x0 + tw]
            restored = np.asarray(restore_fn(patch), dtype=np.float64)
            if restored.shape != patch.shape:
                raise ValueError(f"restore_fn changed shape {patch.shape} -> {restored.shape}")
            acc[y0 : y0 + th, x0 : x0 + tw] += weight * restored
            wsum[y0 : y0 + th, x0 : x0 + tw] += weight
    return acc / wsum


@dataclass
class EvalReport:
    """Per-category PSNR/SSIM means plus their unweighted average.

    ``psnr_db`` per category is the mean over finite per-pair values;
    pairs with zero error are excluded from the mean and counted in
    ``psnr_inf_count`` (displayed as the 100 dB cap when a category has
    no finite value at all).
    """

    per_category: dict
    overall: dict
    metadata: dict = field(default_factory=dict)
    missing: list = field(default_factory=list)
    coverage: float = 1.0

    def to_json(self) -> dict:
        return {
            "per_category": self.per_category,
            "overall": self.overall,
            "metadata": self.metadata,
            "missing": self.missing,
            "coverage": self.coverage,
        }

    def to_markdown(self) -> str:
        cats = list(self.per_category)
        header = "| Metric | " + " | ".join(cats) + " | Average |"
        sep = "|---" * (len(cats) + 2) + "|"
        def fmt_psnr(stats):
            s = f"{stats['psnr_db']:.2f}"
            if stats["psnr_inf_count"]:
                s += f" ({stats['psnr_inf_count']} inf)"
            return s
        psnr_row = (
            "| PSNR (dB) | "
            + " | ".join(fmt_psnr(self.per_category[c]) for c in cats)
            + f" | {self.overall['psnr_db']:.2f} |"
        )
        ssim_row = (
            "| SSIM | "
            + " | ".join(f"{self.per_category[c]['ssim']:.4f}" for c in cats)
            + f" | {self.overall['ssim']:.4f} |"
        )
        count_row = (
            "| images | "
            + " | ".join(str(self.per_category[c]["count"]) for c in cats)
            + f" | {sum(self.per_category[c]['count'] for c in cats)} |"
        )
        lines = [header, sep, psnr_row, ssim_row, count_row]
        if self.missing:
            lines.append("")
            lines.append(f"Missing predictions: {len(self.missing)} (coverage {self.coverage:.3f})")
        return "\n".join(lines) + "\n"


def _aggregate_psnr(values) -> tuple[float, int]:
    finite = [v for v in values if math.isfinite(v)]
    inf_count = len(values) - len(finite)
    if finite:
        return float(np.mean(finite)), inf_count
    return PSNR_DISPLAY_CAP, inf_count


def evaluate_pairs(pairs_by_category: dict, metadata=None, missing=None) -> EvalReport:
    """Aggregate per-pair (psnr, ssim) tuples grouped by category."""
    per_category = {}
    for cat, values in pairs_by_category.items():
        psnrs = [p for p, _ in values]
        ssims = [s for _, s in values]
        mean_psnr, inf_count = _aggregate_psnr(psnrs)
        per_category[cat] = {
            "count": len(values),
            "psnr_db": mean_psnr,
            "ssim": float(np.mean(ssims)) if ssims else 0.0,
            "psnr_inf_count": inf_count,
        }
    cats = list(per_category)
    overall = {
        "psnr_db": float(np.mean([per_category[c]["psnr_db"] for c in cats])) if cats else 0.0,
        "ssim": float(np.mean([per_category[c]["ssim"] for c in cats])) if cats else 0.0,
    }
    missing = missing or []
    total = sum(per_category[c]["count"] for c in cats) + len(missing)
    coverage = 1.0 if total == 0 else 1.0 - len(missing) / total
    return EvalReport(
        per_category=per_category,
        overall=overall,
        metadata=metadata or {},
        missing=missing,
        coverage=coverage,
    )


def evaluate_manifest(predictions_dir, manifest: DatasetManifest, split: str = "test",
                      metadata=None) -> EvalReport:
    """Score every prediction in ``predictions_dir`` against manifest HQ.

    Predictions are PNGs named ``<pair_id>.png``.  Missing predictions are
    listed per row; the report is still emitted with a coverage flag.
    """
    predictions_dir = Path(predictions_dir)
    pairs_by_category = {}
    missing = []
    for row in manifest.select(split=split):
        pred_path = predictions_dir / f"{row.pair_id}.png"
        if not pred_path.exists():
            missing.append(row.pair_id)
            continue
        pred = ioutils.load_png(pred_path)
        hq = ioutils.load_png(manifest.resolve(row.hq_path))
        pairs_by_category.setdefault(row.category, []).append(
            (psnr(pred, hq), ssim(pred, hq))
        )
    ordered = {c: pairs_by_category[c] for c in sorted(pairs_by_category, key=_cat_key)}
    return evaluate_pairs(ordered, metadata=metadata, missing=missing)


def _cat_key(category: str):
    from .degrade import TAXONOMY

    return TAXONOMY.index(category) if category in TAXONOMY else len(TAXONOMY)
