"""Synthetic two-class texture volumes for exercising the pipeline end to end.

Class 0 is white noise box-smoothed with a small radius (fine grain),
class 1 the same with a larger radius (coarse grain).  Each smoothed field
is standardised and multiplied by ``amplitude``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .utils import derive_seed
from .volume import NoduleRef, Volume, write_manifest, write_volume


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 20
    side: int = 64
    radius_a: int = 1
    radius_b: int = 3
    amplitude: float = 100.0
    seed: int = 0
    max_lbp_radius: int = 8

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.radius_a == self.radius_b:
            raise ValueError("the two classes need different smoothing radii")
        if min(self.radius_a, self.radius_b) < 0:
            raise ValueError("smoothing radii must be >= 0")
        if self.side < 2 * (self.max_lbp_radius + 1) + 1:
            raise ValueError(f"side {self.side} too small for LBP radius {self.max_lbp_radius}")


def _texture(rng: np.random.Generator, side: int, radius: int, amplitude: float) -> np.ndarray:
    noise = rng.standard_normal((side, side, side))
    if radius > 0:
        noise = uniform_filter(noise, size=2 * radius + 1, mode="wrap")
    noise -= noise.mean()
    noise /= noise.std()
    return (amplitude * noise).astype(np.float32).astype(np.float64)


def generate_volumes(cfg: SynthConfig) -> list[tuple[Volume, NoduleRef]]:
    """Volumes and manifest entries: ``n_per_class`` of label 0, then of label 1."""
    out = []
    centre = (cfg.side // 2,) * 3
    for label, radius in ((0, cfg.radius_a), (1, cfg.radius_b)):
        for k in range(cfg.n_per_class):
            idx = label * cfg.n_per_class + k
            rng = np.random.default_rng(derive_seed(cfg.seed, idx))
            vid = f"synth_{idx:04d}"
            vol = Volume(_texture(rng, cfg.side, radius, cfg.amplitude))
            out.append((vol, NoduleRef(vid, centre, label)))
    return out


def generate_dataset(cfg: SynthConfig, out_dir: str | os.PathLike) -> Path:
    """Write volumes under ``out_dir/volumes/<id>/`` and ``out_dir/nodules.csv``.

    The manifest is written last, so a failed run never leaves a manifest
    pointing at missing volumes.  Returns the manifest path.
    """
    out_dir = Path(out_dir)
    items = generate_volumes(cfg)
    for vol, ref in items:
        write_volume(vol, out_dir / "volumes" / ref.volume_id)
    manifest = out_dir / "nodules.csv"
    write_manifest([ref for _, ref in items], manifest)
    return manifest
