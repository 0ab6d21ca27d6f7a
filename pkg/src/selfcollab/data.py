"""Unpaired clean/noisy training corpus built from procedural or PNG sources.

Clean and noisy halves come from disjoint source images; the noisy half is
corrupted with heteroscedastic Gaussian noise whose variance grows linearly
with the clean intensity. Held-out validation pairs are aligned, and are the
only place a ground-truth clean image is ever paired with its noisy version.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

MIN_SOURCES = 16


class CorpusError(ValueError):
    """Raised for corpus configurations that cannot produce a valid split."""


@dataclass(frozen=True)
class NoiseModelParams:
    sigma_read: float = 0.04
    sigma_shot: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.sigma_read < 0 or self.sigma_shot < 0:
            raise CorpusError("noise parameters must be nonnegative")


@dataclass(frozen=True)
class CorpusSpec:
    """Where source images come from.

    ``kind="procedural"`` synthesizes gradients, checkerboards, shapes and
    filtered-noise textures; ``kind="png"`` reads every ``*.png`` under
    ``path`` in sorted order. Procedural corpora generate ``n_sources``
    training sources plus ``n_validation`` held-out ones; for PNG corpora the
    last ``n_validation`` files are held out and ``n_sources`` is ignored.
    """

    kind: str = "procedural"
    n_sources: int = 64
    n_validation: int = 8
    size: int = 128
    channels: int = 1
    path: str | None = None


def add_noise(clean: np.ndarray, params: NoiseModelParams, rng: np.random.Generator) -> np.ndarray:
    """clean + N(0, sigma_read^2 + sigma_shot * clean), clamped to [0, 1]."""
    if params.sigma_read == 0 and params.sigma_shot == 0:
        return clean.copy()
    var = params.sigma_read**2 + params.sigma_shot * np.clip(clean, 0.0, None)
    noisy = clean + rng.standard_normal(clean.shape) * np.sqrt(var)
    return np.clip(noisy, 0.0, 1.0)


# -- procedural sources ------------------------------------------------------

def _smooth_field(rng, size, scale):
    from scipy.ndimage import gaussian_filter

    f = gaussian_filter(rng.standard_normal((size, size)), scale, mode="wrap")
    f -= f.min()
    return f / max(f.max(), 1e-12)


def procedural_image(source_id: int, size: int, channels: int, seed: int) -> np.ndarray:
    """Deterministic textured test image in [0, 1], shape (channels, size, size)."""
    rng = np.random.default_rng([seed, source_id])
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    kind = source_id % 4
    if kind == 0:
        ang = rng.uniform(0, 2 * np.pi)
        base = 0.5 + 0.4 * ((np.cos(ang) * xx + np.sin(ang) * yy) - 0.5)
        base = base + 0.15 * _smooth_field(rng, size, size / 16)
    elif kind == 1:
        period = rng.integers(8, 33)
        lo, hi = sorted(rng.uniform(0.15, 0.85, size=2))
        checks = ((np.arange(size)[:, None] // period + np.arange(size)[None, :] // period) % 2)
        base = lo + (hi - lo) * checks
    elif kind == 2:
        base = np.full((size, size), rng.uniform(0.2, 0.5))
        for _ in range(rng.integers(3, 7)):
            cy, cx = rng.uniform(0, 1, size=2)
            r = rng.uniform(0.08, 0.3)
            if rng.random() < 0.5:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
            else:
                mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.5, 1.5))
            base = np.where(mask, rng.uniform(0.1, 0.9), base)
    else:
        base = 0.15 + 0.7 * _smooth_field(rng, size, rng.uniform(2.0, 6.0))
    img = np.clip(base, 0.0, 1.0)
    if channels == 1:
        return img[None]
    tint = rng.uniform(0.8, 1.2, size=(channels, 1, 1))
    return np.clip(img[None] * tint, 0.0, 1.0)


def load_png(path, channels: int) -> np.ndarray:
    mode = "L" if channels == 1 else "RGB"
    arr = np.asarray(Image.open(path).convert(mode), dtype=np.float64) / 255.0
    return arr[None] if channels == 1 else arr.transpose(2, 0, 1)


def save_png(img: np.ndarray, path) -> None:
    """Write a (c, h, w) image in [0, 1] as an 8-bit PNG."""
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    Image.fromarray(arr).save(path)


def load_sources(spec: CorpusSpec, seed: int) -> dict[int, np.ndarray]:
    """All sources keyed by id; validation ids are the last ``n_validation``."""
    if spec.channels not in (1, 3):
        raise CorpusError(f"channels must be 1 or 3, got {spec.channels}")
    if spec.kind == "procedural":
        total = spec.n_sources + spec.n_validation
        return {i: procedural_image(i, spec.size, spec.channels, seed) for i in range(total)}
    if spec.kind == "png":
        if spec.path is None:
            raise CorpusError("png corpus needs a path")
        files = sorted(Path(spec.path).glob("*.png"))
        return {i: load_png(f, spec.channels) for i, f in enumerate(files)}
    raise CorpusError(f"unknown corpus kind {spec.kind!r}")


def _split_ids(spec: CorpusSpec, sources: dict) -> tuple[list[int], list[int]]:
    ids = sorted(sources)
    n_val = spec.n_validation
    if n_val < 0 or n_val >= len(ids):
        raise CorpusError("n_validation leaves no training sources")
    train, val = ids[: len(ids) - n_val], ids[len(ids) - n_val :]
    if len(train) < MIN_SOURCES:
        raise CorpusError(f"need at least {MIN_SOURCES} training sources, got {len(train)}")
    return train, val


@dataclass
class UnpairedCorpus:
    clean_set: list[np.ndarray]
    noisy_set: list[np.ndarray]
    clean_ids: list[int]
    noisy_ids: list[int]
    params: NoiseModelParams
    seed: int
    spec: CorpusSpec = field(default_factory=CorpusSpec)

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "spec": self.spec.__dict__,
            "noise": self.params.__dict__,
            "clean_ids": list(self.clean_ids),
            "noisy_ids": list(self.noisy_ids),
        }

    def write_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))


def build_corpus(spec: CorpusSpec, params: NoiseModelParams, seed: int) -> UnpairedCorpus:
    """Shuffle training sources by ``seed`` and split them in half.

    The first half stays clean (domain X); the second half is corrupted by the
    noise model (domain Y). An odd source count leaves the last one unused.
    """
    sources = load_sources(spec, seed)
    train, _ = _split_ids(spec, sources)
    order = np.random.default_rng(seed).permutation(train)
    half = len(order) // 2
    clean_ids = [int(i) for i in order[:half]]
    noisy_ids = [int(i) for i in order[half : 2 * half]]
    noisy = [add_noise(sources[i], params, np.random.default_rng([params.seed, 0, i])) for i in noisy_ids]
    return UnpairedCorpus(
        clean_set=[sources[i] for i in clean_ids],
        noisy_set=noisy,
        clean_ids=clean_ids,
        noisy_ids=noisy_ids,
        params=params,
        seed=seed,
        spec=spec,
    )


@dataclass
class ValidationPair:
    noisy: np.ndarray
    clean: np.ndarray
    source_id: int


def validation_pairs(
    spec: CorpusSpec,
    params: NoiseModelParams,
    seed: int,
    exclude_ids=(),
) -> list[ValidationPair]:
    """Aligned noisy/clean pairs from held-out sources.

    Raises ``CorpusError`` when any held-out id also appears in ``exclude_ids``
    (normally the training corpus ids).
    """
    sources = load_sources(spec, seed)
    _, val_ids = _split_ids(spec, sources)
    overlap = set(val_ids) & set(exclude_ids)
    if overlap:
        raise CorpusError(f"validation sources overlap training sources: {sorted(overlap)}")
    return [
        ValidationPair(
            noisy=add_noise(sources[i], params, np.random.default_rng([params.seed, 1, i])),
            clean=sources[i],
            source_id=i,
        )
        for i in val_ids
    ]


class BatchStream:
    """Infinite, random-access stream of unpaired ``{"x", "y"}`` patch batches.

    Batch ``step`` is a pure function of ``(seed, step)``: each epoch draws
    fresh independent permutations of the clean and noisy sets, takes
    ``batch`` consecutive entries per step (the incomplete tail is dropped)
    and crops each image at a random location. This makes resuming from any
    step exact without replaying the stream.
    """

    def __init__(self, corpus: UnpairedCorpus, batch: int, patch: int, seed: int,
                 dtype=torch.float32, augment: bool = False):
        if batch < 1:
            raise ValueError("batch must be positive")
        n = min(len(corpus.clean_set), len(corpus.noisy_set))
        if batch > n:
            raise ValueError(f"batch {batch} exceeds the {n} images per domain")
        for img in corpus.clean_set + corpus.noisy_set:
            if patch < 1 or patch > min(img.shape[-2:]):
                raise ValueError(f"patch {patch} does not fit image {img.shape}")
        self.corpus = corpus
        self.batch = batch
        self.patch = patch
        self.seed = seed
        self.dtype = dtype
        self.augment = augment
        self.epoch_length = n // batch

    def indices(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        epoch, j = divmod(step, self.epoch_length)
        px = np.random.default_rng([self.seed, epoch, 0]).permutation(len(self.corpus.clean_set))
        py = np.random.default_rng([self.seed, epoch, 1]).permutation(len(self.corpus.noisy_set))
        sl = slice(j * self.batch, (j + 1) * self.batch)
        return px[sl], py[sl]

    def _crop(self, images, idx, rng):
        out = []
        for i in idx:
            img = images[i]
            h, w = img.shape[-2:]
            t = rng.integers(0, h - self.patch + 1)
            l = rng.integers(0, w - self.patch + 1)
            crop = img[:, t : t + self.patch, l : l + self.patch]
            if self.augment:
                crop = np.rot90(crop, rng.integers(0, 4), axes=(1, 2))
                if rng.random() < 0.5:
                    crop = crop[:, :, ::-1]
            out.append(np.ascontiguousarray(crop))
        return torch.as_tensor(np.stack(out), dtype=self.dtype)

    def batch_at(self, step: int) -> dict[str, torch.Tensor]:
        ix, iy = self.indices(step)
        epoch, j = divmod(step, self.epoch_length)
        rng = np.random.default_rng([self.seed, epoch, j, 2])
        return {"x": self._crop(self.corpus.clean_set, ix, rng), "y": self._crop(self.corpus.noisy_set, iy, rng)}

    def __iter__(self) -> Iterator[dict[str, torch.Tensor]]:
        step = 0
        while True:
            yield self.batch_at(step)
            step += 1


def iterate_batches(corpus: UnpairedCorpus, batch: int, patch: int, seed: int, **kw) -> Iterator[dict]:
    return iter(BatchStream(corpus, batch, patch, seed, **kw))
