"""Paired LQ/HQ dataset generation and its JSON-lines manifest.

Clean images come either from a user directory or from a built-in
procedural generator (smooth random color fields, geometric shapes, and a
fine texture octave), so every experiment can run with zero external
data.  Per-item seeds derive from (dataset seed, category index, item
index), making generation order-independent and reproducible.
"""

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import degrade, ioutils

MANIFEST_NAME = "manifest.jsonl"


@dataclass
class ManifestRow:
    pair_id: str
    category: str
    params: list
    seed: int
    clean_ref: str
    lq_path: str
    hq_path: str
    split: str


class DatasetManifest:
    """Row container with category/class/split filters and pair loading."""

    def __init__(self, rows, root=None):
        self.rows = list(rows)
        self.root = Path(root) if root is not None else None
        ids = [(r.category, r.seed, r.clean_ref) for r in self.rows]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest contains duplicate (category, seed, clean_ref) triples")

    def __len__(self):
        return len(self.rows)

    def select(self, split=None, category=None, klass=None):
        """Filter rows; ``klass`` is 'isolated' or 'coupled'."""
        out = self.rows
        if split is not None:
            out = [r for r in out if r.split == split]
        if category is not None:
            out = [r for r in out if r.category == category]
        if klass == "isolated":
            out = [r for r in out if degrade.is_isolated(r.category)]
        elif klass == "coupled":
            out = [r for r in out if not degrade.is_isolated(r.category)]
        elif klass is not None:
            raise ValueError(f"unknown class {klass!r}")
        return out

    def categories(self):
        seen = []
        for r in self.rows:
            if r.category not in seen:
                seen.append(r.category)
        return sorted(seen, key=degrade.TAXONOMY.index)

    def resolve(self, rel_path: str) -> Path:
        if self.root is None:
            return Path(rel_path)
        return self.root / rel_path

    def load_pair(self, row: ManifestRow):
        return ioutils.load_png(self.resolve(row.lq_path)), ioutils.load_png(
            self.resolve(row.hq_path)
        )

    def save(self, path) -> None:
        ioutils.write_jsonl(path, [asdict(r) for r in self.rows])

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        rows = [ManifestRow(**row) for row in ioutils.read_jsonl(path)]
        return cls(rows, root=path.parent)


def synth_clean(rng: np.random.Generator, size: int = 96) -> np.ndarray:
    """Procedural clean image: low-frequency color field, a few shapes,
    and a small high-frequency texture octave (so lossy operators always
    measurably hurt)."""
    img = np.stack(
        [gaussian_filter(rng.standard_normal((size, size)), size / 6.0) for _ in range(3)],
        axis=-1,
    )
    lo, hi = img.min(), img.max()
    img = 0.15 + 0.7 * (img - lo) / max(hi - lo, 1e-9)

    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(3, 7))):
        color = rng.uniform(0.05, 0.95, 3)
        if rng.random() < 0.5:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size / 12, size / 4)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        else:
            y0, x0 = rng.integers(0, size, 2)
            hh, ww = rng.integers(size // 8, size // 2, 2)
            mask = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
        img[mask] = color

    img += 0.04 * gaussian_filter(rng.standard_normal((size, size, 3)), 0.6)
    return np.clip(img, 0.0, 1.0)


def _list_source_images(source_dir) -> list:
    exts = {".png", ".jpg", ".jpeg", ".bmp"}
    files = sorted(p for p in Path(source_dir).iterdir() if p.suffix.lower() in exts)
    if not files:
        raise FileNotFoundError(f"no images found in clean source {source_dir}")
    return files


def gen_dataset(
    clean_source,
    categories,
    count_per_category: int,
    seed: int,
    out_dir,
    image_size: int = 96,
    test_fraction: float = 0.1,
) -> DatasetManifest:
    """Write HQ/LQ PNG pairs plus a manifest under ``out_dir``.

    ``clean_source`` is a directory of images or None for the procedural
    generator.  The last ~``test_fraction`` of each category goes to the
    test split (at least one item when the category has two or more).
    """
    if count_per_category < 1:
        raise ValueError(f"count_per_category must be >= 1, got {count_per_category}")
    out_dir = Path(out_dir)
    source_files = None if clean_source is None else _list_source_images(clean_source)

    if count_per_category >= 2:
        n_test = max(1, int(round(count_per_category * test_fraction)))
    else:
        n_test = 0

    rows = []
    for category in categories:
        cat_index = degrade.TAXONOMY.index(category)
        for i in range(count_per_category):
            rng = np.random.default_rng(np.random.SeedSequence([seed, cat_index, i]))
            if source_files is None:
                clean = synth_clean(rng, image_size)
                clean_ref = f"procedural:{seed}/{category}/{i}"
            else:
                src = source_files[int(rng.integers(len(source_files)))]
                clean = _center_crop(ioutils.load_png(src), image_size)
                clean_ref = str(src)
            spec = degrade.sample_spec(category, rng)
            lq = degrade.apply(spec, clean)

            pair_id = f"{category.replace('+', '')}-{i:05d}"
            lq_rel = f"lq/{pair_id}.png"
            hq_rel = f"hq/{pair_id}.png"
            ioutils.save_png(out_dir / lq_rel, lq)
            ioutils.save_png(out_dir / hq_rel, clean)
            rows.append(
                ManifestRow(
                    pair_id=pair_id,
                    category=category,
                    params=[[name, params] for name, params in spec.operators],
                    seed=spec.seed,
                    clean_ref=clean_ref,
                    lq_path=lq_rel,
                    hq_path=hq_rel,
                    split="test" if i >= count_per_category - n_test else "train",
                )
            )

    manifest = DatasetManifest(rows, root=out_dir)
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"source image {h}x{w} smaller than requested size {size}")
    y0, x0 = (h - size) // 2, (w - size) // 2
    return img[y0 : y0 + size, x0 : x0 + size]
