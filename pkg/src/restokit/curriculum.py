"""Training strategies as iteration-indexed batch recipes, plus the
training loop for the residual diffusion generalist.

Five strategies over one dataset manifest:

* ``mix``      - every iteration draws uniformly from all pairs;
* ``combine``  - every batch carries a fixed mini-quota per category;
* ``sequence`` - categories occupy consecutive iteration blocks;
* ``il_ic``    - isolated-first curriculum: n iterations on isolated
  degradations only, then 2n iterations on combined isolated+coupled
  batches whose loss is the sum of the two class terms;
* ``il_ci``    - the mirrored order (coupled first).

Every stochastic choice of iteration i derives from (seed, i), so a run
resumed from the phase-boundary checkpoint replays the exact batch,
timestep, and noise sequence of an uninterrupted run.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import denoiser as denoiser_mod
from .dataset import DatasetManifest
from .degrade import TAXONOMY, is_isolated
from .diffusion import forward_sample, training_loss
from .ioutils import atomic_write_bytes, atomic_write_text, load_png
from .schedule import SchedulePlan

STRATEGIES = ("mix", "combine", "sequence", "il_ci", "il_ic")

# Full-scale reference settings; desk-scale defaults below are what tests use.
PRESET_PAPER = {
    "batch_size": 80,
    "patch_size": 256,
    "lr_initial": 1e-4,
    "lr_decay_point": 1_000_000,
    "lr_decayed": 5e-5,
    "total_iters": 2_000_000,
}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    patch_size: int = 64
    lr_initial: float = 1e-4
    lr_decay_point: int | None = None  # defaults to half the plan length
    lr_decayed: float = 5e-5
    total_iters: int | None = None  # None: use the plan's length
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1 or self.patch_size < 1:
            raise ValueError("batch_size and patch_size must be positive")
        if self.lr_initial <= 0 or self.lr_decayed <= 0:
            raise ValueError("learning rates must be positive")
        if self.total_iters is not None and self.total_iters < 1:
            raise ValueError("total_iters must be positive")
        if (
            self.lr_decay_point is not None
            and self.total_iters is not None
            and self.lr_decay_point > self.total_iters
        ):
            raise ValueError("lr_decay_point must be <= total_iters")


@dataclass
class BatchItem:
    lq: np.ndarray
    hq: np.ndarray
    category: str
    pair_id: str
    offset: tuple  # (y, x) crop origin, identical for LQ and HQ


class CurriculumPlan:
    """Strategy + phase structure + the batch recipe function."""

    def __init__(self, strategy: str, manifest: DatasetManifest, n: int, total_iters: int):
        self.strategy = strategy
        self.manifest = manifest
        self.n = n
        self.total_iters = total_iters
        self._train_categories = [
            c for c in manifest.categories() if manifest.select(split="train", category=c)
        ]

    def phase(self, iteration: int) -> int:
        """1 during the warm-up phase of the IL strategies, else 2."""
        if self.strategy in ("il_ic", "il_ci") and iteration <= self.n:
            return 1
        return 2

    def recipe(self, iteration: int) -> list:
        """Batch composition at ``iteration``: (class, category, share)."""
        if not 1 <= iteration <= self.total_iters:
            raise ValueError(f"iteration {iteration} outside [1, {self.total_iters}]")
        if self.strategy == "mix":
            return [("all", "*", 1.0)]
        if self.strategy == "combine":
            cats = self._train_categories
            return [("all", c, 1.0 / len(cats)) for c in cats]
        if self.strategy == "sequence":
            cats = self._train_categories
            boundaries = [round(k * self.total_iters / len(cats)) for k in range(1, len(cats) + 1)]
            for cat, bound in zip(cats, boundaries):
                if iteration <= bound:
                    return [("all", cat, 1.0)]
            return [("all", cats[-1], 1.0)]
        if self.strategy in ("il_ic", "il_ci"):
            first = "isolated" if self.strategy == "il_ic" else "coupled"
            if iteration <= self.n:
                return [(first, "*", 1.0)]
            return [("isolated", "*", 0.5), ("coupled", "*", 0.5)]
        raise ValueError(f"unknown strategy {self.strategy!r}")


def make_plan(strategy: str, manifest: DatasetManifest, n: int,
              total_iters: int | None = None) -> CurriculumPlan:
    """Build a plan; IL strategies run n warm-up + 2n combined iterations."""
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if total_iters is None:
        if n == 0:
            raise ValueError("total_iters is required when n == 0")
        total_iters = 3 * n
    if strategy in ("il_ic", "il_ci"):
        if not manifest.select(split="train", klass="isolated"):
            raise ValueError("incremental strategies need isolated-class training rows")
        if not manifest.select(split="train", klass="coupled"):
            raise ValueError("incremental strategies need coupled-class training rows")
    if not manifest.select(split="train"):
        raise ValueError("manifest has no training rows")
    return CurriculumPlan(strategy, manifest, n, total_iters)


_image_cache: dict = {}


def _cached_image(path: Path) -> np.ndarray:
    stat = path.stat()
    key = (str(path), stat.st_mtime_ns, stat.st_size)
    if key not in _image_cache:
        if len(_image_cache) > 4096:
            _image_cache.clear()
        _image_cache[key] = load_png(path)
    return _image_cache[key]


def _integer_shares(shares, batch_size: int) -> list:
    """Largest-remainder split of batch_size by fractional shares."""
    raw = [s * batch_size for s in shares]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[: batch_size - sum(counts)]:
        counts[i] += 1
    return counts


def next_batch(plan: CurriculumPlan, iteration: int, manifest: DatasetManifest,
               rng: np.random.Generator, batch_size: int = 8,
               patch_size: int = 64) -> list:
    """Assemble one batch per the recipe; LQ and HQ patches share offsets."""
    entries = plan.recipe(iteration)
    counts = _integer_shares([share for _, _, share in entries], batch_size)
    batch = []
    for (klass, category, _), count in zip(entries, counts):
        if count == 0:
            continue
        pool = manifest.select(
            split="train",
            category=None if category == "*" else category,
            klass=None if klass == "all" else klass,
        )
        if not pool:
            raise ValueError(f"no training rows for class={klass!r} category={category!r}")
        for idx in rng.integers(0, len(pool), size=count):
            row = pool[int(idx)]
            lq = _cached_image(manifest.resolve(row.lq_path))
            hq = _cached_image(manifest.resolve(row.hq_path))
            h, w = lq.shape[:2]
            if h < patch_size or w < patch_size:
                raise ValueError(
                    f"pair {row.pair_id}: image {h}x{w} smaller than patch {patch_size}"
                )
            y = int(rng.integers(0, h - patch_size + 1))
            x = int(rng.integers(0, w - patch_size + 1))
            batch.append(
                BatchItem(
                    lq=lq[y : y + patch_size, x : x + patch_size],
                    hq=hq[y : y + patch_size, x : x + patch_size],
                    category=row.category,
                    pair_id=row.pair_id,
                    offset=(y, x),
                )
            )
    return batch


def _iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, iteration]))


def _batch_tensors(batch, plan_sched: SchedulePlan, t: int, rng):
    lq = np.stack([item.lq for item in batch])
    hq = np.stack([item.hq for item in batch])
    noise = rng.standard_normal(lq.shape)
    i_t = forward_sample(plan_sched, hq, lq, t, noise)
    x = np.concatenate([i_t, lq], axis=3).transpose(0, 3, 1, 2).astype(np.float32)
    target = (lq - hq).transpose(0, 3, 1, 2).astype(np.float32)
    return torch.from_numpy(x), torch.from_numpy(target)


def run_training(
    denoiser,
    plan: CurriculumPlan,
    schedule_plan: SchedulePlan,
    train_config: TrainConfig,
    out_dir,
    resume_from=None,
) -> list:
    """Run the loop: sample batch -> sample t -> forward diffuse -> predict
    residual -> L1 loss -> optimizer step.

    Emits a checkpoint at the IL phase boundary and at the end, plus a
    JSON-lines run log {iteration, phase, loss, lr, categories}.  The
    optimizer restarts at the phase boundary (phase 2 begins from the
    loaded warm-up parameters), which is what makes ``resume_from`` the
    phase-1 checkpoint exactly reproduce an uninterrupted run.

    Returns the list of checkpoint paths written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = plan.total_iters
    if train_config.total_iters is not None and train_config.total_iters != total:
        raise ValueError(
            f"train_config.total_iters={train_config.total_iters} conflicts with "
            f"plan.total_iters={total}"
        )
    decay_point = train_config.lr_decay_point
    if decay_point is None:
        decay_point = total // 2
    if decay_point > total:
        raise ValueError(f"lr_decay_point {decay_point} exceeds total iterations {total}")

    net = denoiser.net
    net.train()

    start_iter = 1
    if resume_from is not None:
        data = Path(resume_from).read_bytes()
        loaded, meta = denoiser_mod.load_checkpoint(data)
        if meta["phase"] != 1 or meta["iteration"] != plan.n:
            raise ValueError(
                f"resume checkpoint is phase {meta['phase']} iteration "
                f"{meta['iteration']}, expected the phase-1 boundary (iteration {plan.n})"
            )
        if meta["strategy"] != plan.strategy or meta["seed"] != train_config.seed:
            raise ValueError("resume checkpoint strategy/seed do not match this run")
        net.load_state_dict(loaded.net.state_dict())
        start_iter = plan.n + 1

    def fresh_optimizer():
        return torch.optim.Adam(
            net.parameters(),
            lr=train_config.lr_initial,
            betas=(train_config.adam_beta1, train_config.adam_beta2),
            eps=train_config.adam_eps,
        )

    def ckpt_meta(iteration, phase):
        from dataclasses import asdict

        return {
            "schedule": asdict(schedule_plan.config),
            "strategy": plan.strategy,
            "iteration": iteration,
            "phase": phase,
            "seed": train_config.seed,
            "n": plan.n,
        }

    optimizer = fresh_optimizer()
    checkpoints = []
    log_rows = []
    boundary = plan.n if plan.strategy in ("il_ic", "il_ci") else None

    for iteration in range(start_iter, total + 1):
        phase = plan.phase(iteration)
        lr = train_config.lr_initial if iteration <= decay_point else train_config.lr_decayed
        for group in optimizer.param_groups:
            group["lr"] = lr

        rng = _iteration_rng(train_config.seed, iteration)
        batch = next_batch(
            plan, iteration, plan.manifest, rng,
            batch_size=train_config.batch_size, patch_size=train_config.patch_size,
        )
        t = int(rng.integers(1, schedule_plan.T + 1))
        x, target = _batch_tensors(batch, schedule_plan, t, rng)
        t_tensor = torch.full((x.shape[0],), float(t))

        pred = net(x, t_tensor)
        if phase == 2 and plan.strategy in ("il_ic", "il_ci"):
            iso = torch.tensor([is_isolated(item.category) for item in batch])
            loss = pred.new_zeros(())
            if bool(iso.any()):
                loss = loss + training_loss(pred[iso], target[iso])
            if bool((~iso).any()):
                loss = loss + training_loss(pred[~iso], target[~iso])
        else:
            loss = training_loss(pred, target)

        loss_value = float(loss.detach())
        if not np.isfinite(loss_value):
            histogram = _category_histogram(batch)
            raise RuntimeError(
                f"non-finite loss at iteration {iteration} (t={t}, batch={histogram})"
            )
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        log_rows.append(
            {
                "iteration": iteration,
                "phase": phase,
                "loss": loss_value,
                "lr": lr,
                "categories": _category_histogram(batch),
            }
        )

        if boundary is not None and iteration == boundary:
            path = out_dir / "checkpoint_phase1.ckpt"
            atomic_write_bytes(path, denoiser_mod.save_checkpoint(denoiser, ckpt_meta(iteration, 1)))
            checkpoints.append(path)
            optimizer = fresh_optimizer()

    final = out_dir / "checkpoint_final.ckpt"
    atomic_write_bytes(
        final, denoiser_mod.save_checkpoint(denoiser, ckpt_meta(total, plan.phase(total)))
    )
    checkpoints.append(final)
    net.eval()

    atomic_write_text(
        out_dir / "run_log.jsonl",
        "".join(json.dumps(row, sort_keys=True) + "\n" for row in log_rows),
    )
    return checkpoints


def _category_histogram(batch) -> dict:
    histogram: dict = {}
    for item in batch:
        histogram[item.category] = histogram.get(item.category, 0) + 1
    return dict(sorted(histogram.items()))


def read_run_log(out_dir) -> list:
    path = Path(out_dir) / "run_log.jsonl"
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
