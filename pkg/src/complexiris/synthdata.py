"""Synthetic iris strips: one 1/f^alpha texture per identity, with rotation,
pixel noise and masked occlusion bands per sample.

An occlusion band only clears the validity mask; the pixels under it keep
their (noisy) texture values.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pgm import from_unit, read_mask, read_pgm, to_unit, write_mask, write_pgm

STRIP_H = 64
STRIP_W = 256
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SynthSpec:
    num_identities: int = 10
    samples_per_identity: int = 8
    noise_std: float = 0.08
    max_rotation_columns: int = 8
    occlusion_probability: float = 0.3
    alpha: float = 1.0
    contrast: float = 0.03
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.3

    def __post_init__(self):
        if self.num_identities < 1 or self.samples_per_identity < 1:
            raise ValueError("identity and sample counts must be >= 1")
        if not self.contrast > 0:
            raise ValueError("contrast must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 <= self.max_rotation_columns <= 64:
            raise ValueError("max_rotation_columns must lie in [0, 64]")
        if not 0 <= self.occlusion_probability <= 1:
            raise ValueError("occlusion_probability must lie in [0, 1]")
        if self.val_fraction < 0 or self.test_fraction < 0 or self.val_fraction + self.test_fraction >= 1:
            raise ValueError("split fractions must be >= 0 and leave room for training")


@dataclass(frozen=True)
class Sample:
    strip_path: str
    mask_path: str
    identity: int
    split: str


def base_texture(rng, alpha=1.0, contrast=0.03, h=STRIP_H, w=STRIP_W):
    """Gaussian noise shaped to a 1/f^alpha amplitude spectrum, scaled to
    mean 0.5 and standard deviation ``contrast``, clipped to [0, 1].
    Periodic along columns."""
    noise = rng.standard_normal((h, w))
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = np.inf  # drop DC
    tex = np.fft.ifft2(np.fft.fft2(noise) / f ** alpha).real
    tex = (tex - tex.mean()) / tex.std()
    return np.clip(0.5 + contrast * tex, 0.0, 1.0)


def split_of(identity: int, spec: SynthSpec) -> str:
    """Identity-disjoint split: the last identities go to test, then val."""
    n = spec.num_identities
    n_test = int(round(spec.test_fraction * n))
    n_val = int(round(spec.val_fraction * n))
    if identity >= n - n_test:
        return "test"
    if identity >= n - n_test - n_val:
        return "val"
    return "train"


def render_sample(texture, rng, spec: SynthSpec):
    shift = int(rng.integers(-spec.max_rotation_columns, spec.max_rotation_columns + 1))
    strip = np.roll(texture, shift, axis=1)
    if spec.noise_std > 0:
        strip = strip + spec.noise_std * rng.standard_normal(strip.shape)
    strip = np.clip(strip, 0.0, 1.0)
    mask = np.ones(strip.shape, bool)
    # the draw always happens so occlusion settings do not reshuffle the rest
    u, start, width = rng.random(), int(rng.integers(STRIP_W)), int(rng.integers(16, 65))
    if u < spec.occlusion_probability:
        cols = (start + np.arange(width)) % strip.shape[1]
        mask[:, cols] = False
    return strip, mask, shift


def generate_arrays(spec: SynthSpec):
    """In-memory dataset: (strips uint8 N x 64 x 256, masks, identities, splits)."""
    strips, masks, ids, splits = [], [], [], []
    for ident in range(spec.num_identities):
        tex = base_texture(np.random.default_rng([spec.seed, ident]), spec.alpha, spec.contrast)
        for k in range(spec.samples_per_identity):
            rng = np.random.default_rng([spec.seed, ident, k + 1])
            s, m, _ = render_sample(tex, rng, spec)
            strips.append(from_unit(s))
            masks.append(m)
            ids.append(ident)
            splits.append(split_of(ident, spec))
    return np.stack(strips), np.stack(masks), np.array(ids), splits


def generate(spec: SynthSpec, out_dir) -> list:
    """Write strips/masks as PGM plus ``manifest.csv``; returns the samples."""
    out = Path(out_dir)
    (out / "strips").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    strips, masks, ids, splits = generate_arrays(spec)
    samples = []
    idx = 0
    for ident in range(spec.num_identities):
        for k in range(spec.samples_per_identity):
            stem = f"id{ident:04d}_s{k:03d}"
            sp = f"strips/{stem}.norm.pgm"
            mp = f"masks/{stem}.mask.pgm"
            write_pgm(out / sp, strips[idx])
            write_mask(out / mp, masks[idx])
            samples.append(Sample(sp, mp, ident, splits[idx]))
            idx += 1
    write_manifest(out / "manifest.csv", samples)
    return samples


def write_manifest(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strip_path", "mask_path", "identity", "split"])
        for s in samples:
            w.writerow([s.strip_path, s.mask_path, s.identity, s.split])


def read_manifest(path) -> list:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        need = {"strip_path", "mask_path", "identity", "split"}
        if r.fieldnames is None or not need <= set(r.fieldnames):
            raise ValueError(f"{path}: manifest must have columns {sorted(need)}")
        out = []
        for row in r:
            if row["split"] not in SPLITS:
                raise ValueError(f"{path}: unknown split {row['split']!r}")
            out.append(Sample(row["strip_path"], row["mask_path"], int(row["identity"]), row["split"]))
    return out


def resolve(manifest_path, rel) -> str:
    return rel if os.path.isabs(rel) else os.path.join(os.path.dirname(os.path.abspath(manifest_path)), rel)


def load_split(manifest_path, split: str | None = None):
    """(strips float N x 64 x 256 in [0,1], masks bool, identities, samples)."""
    samples = [s for s in read_manifest(manifest_path) if split is None or s.split == split]
    if not samples:
        raise ValueError(f"{manifest_path}: no samples in split {split!r}")
    strips = np.stack([to_unit(read_pgm(resolve(manifest_path, s.strip_path))) for s in samples])
    masks = np.stack([read_mask(resolve(manifest_path, s.mask_path)) for s in samples])
    return strips, masks, np.array([s.identity for s in samples]), samples


def render_eye(h=200, w=200, cx=100.0, cy=100.0, r_pupil=25.0, r_limbus=70.0,
               rng=None, rotation=0.0, pupil_level=0.1, sclera_level=0.85, harmonics=12):
    """Analytic eye image: dark disc, textured annulus, bright surround.

    The iris texture is a random sum of angular harmonics with a slow radial
    modulation, so rendering with ``rotation`` equals rotating the image by
    that angle (radians, counter-clockwise in x-right, y-down coordinates)
    about the common centre.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    k = np.arange(1, harmonics + 1)
    amp = 0.12 / np.sqrt(k)
    phase = rng.uniform(0, 2 * np.pi, harmonics)
    radial = rng.uniform(0, 2 * np.pi, harmonics)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = np.hypot(xx - cx, yy - cy)
    theta = np.arctan2(yy - cy, xx - cx) - rotation
    rho = np.clip((r - r_pupil) / (r_limbus - r_pupil), 0, 1)
    tex = 0.45 + (amp * np.cos(k * theta[..., None] + phase)
                  * np.cos(np.pi * rho[..., None] + radial)).sum(-1)
    img = np.where(r < r_pupil, pupil_level, np.where(r < r_limbus, tex, sclera_level))
    return np.clip(img, 0.0, 1.0)
