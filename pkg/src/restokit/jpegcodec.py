"""In-memory JPEG-style lossy round trip: YCbCr, 8x8 block DCT, standard
quantization tables, no chroma subsampling (4:4:4) and no entropy coding
(which is lossless and therefore irrelevant to pixel output).

Quality q maps to a table scale with the conventional rule
scale = 5000/q for q < 50 else 200 - 2q; entries clamp to [1, 255].  At
q = 50 the scale is 100 and the base tables apply unchanged.
"""

import numpy as np
from scipy.fft import dctn, idctn

LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * scale + 50.0) / 100.0), 1.0, 255.0)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """JFIF full-range color transform on the 0..255 scale."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168735892 * r - 0.331264108 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418687589 * g - 0.081312411 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136286 * cb - 0.714136286 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _quantize_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    blocks = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, axes=(2, 3), norm="ortho")
    coef = np.round(coef / table) * table
    rec = idctn(coef, axes=(2, 3), norm="ortho")
    return rec.transpose(0, 2, 1, 3).reshape(h, w)


def encode_decode(image: np.ndarray, quality: int) -> np.ndarray:
    """Lossy round trip of an HxWx3 float image in [0, 1].

    The input is first quantized to the 8-bit grid, matching what a real
    encoder would see.
    """
    x = np.round(np.clip(image, 0.0, 1.0) * 255.0)
    ycc = rgb_to_ycbcr(x)
    h, w = ycc.shape[:2]
    ycc = np.pad(ycc, ((0, (-h) % 8), (0, (-w) % 8), (0, 0)), mode="edge")
    out = np.empty_like(ycc)
    luma = scaled_table(LUMA_TABLE, quality)
    chroma = scaled_table(CHROMA_TABLE, quality)
    out[..., 0] = _quantize_plane(ycc[..., 0] - 128.0, luma) + 128.0
    for c in (1, 2):
        out[..., c] = _quantize_plane(ycc[..., c] - 128.0, chroma) + 128.0
    rgb = ycbcr_to_rgb(out[:h, :w])
    return np.clip(rgb, 0.0, 255.0) / 255.0
