"""Synthetic degradation taxonomy: 7 isolated types and 13 physically
plausible couplings, applied in a fixed composition order that mirrors
image formation (illumination -> medium -> optics -> sensor -> encoding).

Category codes: B blur, N noise, J JPEG compression, H haze, R rain,
RD raindrop, L lowlight.  Coupled codes join letters with '+'.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve, gaussian_filter

from . import jpegcodec

ISOLATED_CATEGORIES = ("B", "N", "J", "H", "R", "RD", "L")
COUPLED_CATEGORIES = (
    "B+N", "B+J", "N+J", "R+H", "L+H", "L+R", "L+B", "L+N", "L+J",
    "L+B+N", "L+B+J", "L+N+J", "B+N+J",
)
TAXONOMY = ISOLATED_CATEGORIES + COUPLED_CATEGORIES

_LETTER_TO_OP = {
    "L": "lowlight",
    "H": "haze",
    "R": "rain",
    "RD": "raindrop",
    "B": "blur",
    "N": "noise",
    "J": "jpeg",
}
# Composition order: illumination, then medium, then optics, sensor, encoding.
CANONICAL_ORDER = ("lowlight", "haze", "rain", "raindrop", "blur", "noise", "jpeg")


def category_letters(category: str) -> list:
    letters = category.split("+")
    if category not in TAXONOMY or any(l not in _LETTER_TO_OP for l in letters):
        raise ValueError(f"unknown degradation category {category!r}")
    return letters


def is_isolated(category: str) -> bool:
    return len(category_letters(category)) == 1


def operators_for(category: str) -> list:
    """Operator names for a category, in canonical composition order."""
    ops = [_LETTER_TO_OP[l] for l in category_letters(category)]
    return sorted(ops, key=CANONICAL_ORDER.index)


@dataclass(frozen=True)
class DegradationSpec:
    """One fully parameterised degradation: ordered operators plus a seed
    that pins every stochastic choice made at apply time."""

    category: str
    operators: tuple = field(default=())
    seed: int = 0

    def __post_init__(self):
        expected = operators_for(self.category)
        names = [name for name, _ in self.operators]
        if names != expected:
            raise ValueError(
                f"operator list {names} does not match category "
                f"{self.category!r} (expected {expected})"
            )

    def params_of(self, op_name: str) -> dict:
        for name, params in self.operators:
            if name == op_name:
                return params
        raise KeyError(op_name)


# Documented sampling ranges for each operator's parameters.
def _draw_params(op: str, rng: np.random.Generator) -> dict:
    if op == "blur":
        if rng.random() < 0.5:
            return {"kind": "gaussian", "sigma": float(rng.uniform(1.0, 4.0))}
        return {
            "kind": "motion",
            "length": int(rng.integers(5, 22)),
            "angle_deg": float(rng.uniform(0.0, 180.0)),
        }
    if op == "noise":
        return {"sigma": float(rng.uniform(0.02, 0.2))}
    if op == "jpeg":
        return {"quality": int(rng.integers(10, 51))}
    if op == "haze":
        return {"airlight": float(rng.uniform(0.7, 1.0)), "beta": float(rng.uniform(0.5, 2.0))}
    if op == "rain":
        return {
            "count": int(rng.integers(50, 301)),
            "angle_deg": float(rng.uniform(-10.0, 10.0)),
            "length": int(rng.integers(12, 33)),
            "intensity": float(rng.uniform(0.15, 0.45)),
        }
    if op == "raindrop":
        return {
            "count": int(rng.integers(3, 13)),
            "radius_frac": float(rng.uniform(0.06, 0.14)),
            "blur_sigma": float(rng.uniform(2.0, 4.0)),
            "brighten": float(rng.uniform(0.06, 0.15)),
        }
    if op == "lowlight":
        return {"gain": float(rng.uniform(0.1, 0.6)), "gamma": float(rng.uniform(1.8, 3.0))}
    raise ValueError(f"unknown operator {op!r}")


def sample_spec(category: str, rng: np.random.Generator) -> DegradationSpec:
    """Draw one spec for ``category``; deterministic given the rng state."""
    ops = tuple((op, _draw_params(op, rng)) for op in operators_for(category))
    return DegradationSpec(category=category, operators=ops, seed=int(rng.integers(2**31 - 1)))


def _motion_kernel(length: int, angle_deg: float) -> np.ndarray:
    size = length if length % 2 == 1 else length + 1
    kernel = np.zeros((size, size))
    c = (size - 1) / 2.0
    theta = math.radians(angle_deg)
    for r in np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, 4 * length):
        y = int(round(c + r * math.sin(theta)))
        x = int(round(c + r * math.cos(theta)))
        kernel[y, x] += 1.0
    return kernel / kernel.sum()


def _apply_blur(img, params, rng):
    if params["kind"] == "gaussian":
        sigma = params["sigma"]
        if sigma <= 1e-8:
            return img.copy()
        return gaussian_filter(img, sigma=(sigma, sigma, 0.0), mode="reflect")
    kernel = _motion_kernel(params["length"], params["angle_deg"])
    out = np.empty_like(img)
    for c in range(3):
        out[..., c] = convolve(img[..., c], kernel, mode="reflect")
    return out


def _apply_noise(img, params, rng):
    return img + rng.normal(0.0, params["sigma"], img.shape)


def _apply_jpeg(img, params, rng):
    return jpegcodec.encode_decode(img, params["quality"])


def _smooth_field(shape, rng, sigma):
    field_ = gaussian_filter(rng.standard_normal(shape), sigma)
    lo, hi = field_.min(), field_.max()
    if hi - lo < 1e-12:
        return np.zeros(shape)
    return (field_ - lo) / (hi - lo)


def _apply_haze(img, params, rng):
    # Atmospheric scattering I = J*exp(-beta*d) + A*(1 - exp(-beta*d)) with
    # a smooth synthetic depth field d in [0.5, 1.5].
    h, w = img.shape[:2]
    depth = 0.5 + _smooth_field((h, w), rng, sigma=max(h, w) / 4.0)
    trans = np.exp(-params["beta"] * depth)[..., None]
    return img * trans + params["airlight"] * (1.0 - trans)


def _apply_rain(img, params, rng):
    h, w = img.shape[:2]
    layer = np.zeros((h, w))
    theta = math.radians(90.0 + params["angle_deg"])  # near-vertical
    dy, dx = math.sin(theta), math.cos(theta)
    for _ in range(params["count"]):
        y0 = rng.uniform(-params["length"], h)
        x0 = rng.uniform(0, w)
        length = params["length"] * rng.uniform(0.6, 1.0)
        strength = rng.uniform(0.5, 1.0)
        for r in np.arange(0.0, length, 0.5):
            y, x = int(y0 + r * dy), int(x0 + r * dx)
            if 0 <= y < h and 0 <= x < w:
                layer[y, x] = max(layer[y, x], strength)
    layer = gaussian_filter(layer, 0.5) * params["intensity"]
    return img + layer[..., None] * (1.0 - img)


def _apply_raindrop(img, params, rng):
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    out = img.copy()
    blurred = gaussian_filter(img, sigma=(params["blur_sigma"], params["blur_sigma"], 0.0))
    bright = np.clip(blurred + params["brighten"], 0.0, 1.0)
    base_radius = params["radius_frac"] * min(h, w)
    for _ in range(params["count"]):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        radius = base_radius * rng.uniform(0.9, 1.3)
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        feather = max(radius * 0.3, 1.0)
        mask = np.clip((radius - dist) / feather, 0.0, 1.0)[..., None]
        out = out * (1.0 - mask) + bright * mask
    return out


def _apply_lowlight(img, params, rng):
    return params["gain"] * np.power(img, params["gamma"])


_OPERATOR_FNS = {
    "blur": _apply_blur,
    "noise": _apply_noise,
    "jpeg": _apply_jpeg,
    "haze": _apply_haze,
    "rain": _apply_rain,
    "raindrop": _apply_raindrop,
    "lowlight": _apply_lowlight,
}


def apply(spec: DegradationSpec, clean: np.ndarray) -> np.ndarray:
    """Degrade ``clean`` per spec.  Pure: repeated calls are identical.

    Each operator gets an rng derived from (spec.seed, operator name), so
    a coupled category is pixel-identical to applying its constituent
    single-operator specs sequentially with the same seed and parameters.
    """
    img = np.clip(np.asarray(clean, dtype=np.float64), 0.0, 1.0)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
    for name, params in spec.operators:
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, CANONICAL_ORDER.index(name)])
        )
        img = _OPERATOR_FNS[name](img, params, rng)
        img = np.clip(img, 0.0, 1.0)
    return img
