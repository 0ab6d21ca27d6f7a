"""One forward pass through both synthesis branches.

Branch 1 works from the denoised real image ``y_rec``: it re-noises it with
its own extracted noise (self-synthesis, ``y_s_syn``) and with noise taken
from the synthetic x side (unpaired synthesis, ``y_u_syn``). Branch 2 starts
from the clean image ``x``: it is noised with the real image's noise
(``x_u_syn``), denoised to ``x_rec`` and re-noised with the noise extracted
from ``x_u_syn`` (``x_s_syn``).
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .networks import NetworkHandle, generate, ne_extract

FAKE_ORDER = ("y_s_syn", "y_u_syn", "x_u_syn", "x_s_syn")


@dataclass(frozen=True)
class BranchStructure:
    """Which parts of the two-branch graph are active.

    The full graph is the default; the ablation ladder switches parts off.
    Without the NE module the generator is fed the raw noisy image.
    """

    use_ne: bool = True
    self_synthesis: bool = True
    parallel: bool = True


FULL = BranchStructure()


@dataclass
class ModelBundle:
    G: NetworkHandle
    D: NetworkHandle
    DN: NetworkHandle
    DN0: NetworkHandle
    k: int = 0

    def check(self) -> None:
        if self.k >= 1:
            if not self.DN0.frozen:
                raise RuntimeError("the NE denoiser must be frozen after the first replacement")
            if self.DN0.variant != self.DN.variant:
                raise RuntimeError("the NE denoiser must be a snapshot of the trained denoiser")

    def handles(self) -> dict[str, NetworkHandle]:
        return {"G": self.G, "D": self.D, "DN": self.DN, "DN0": self.DN0}

    def checksums(self) -> dict[str, str]:
        return {name: h.checksum() for name, h in self.handles().items()}


@dataclass
class SynthesisBundle:
    x: torch.Tensor
    y: torch.Tensor
    n_y: torch.Tensor
    x_u_syn: torch.Tensor
    x_rec: torch.Tensor
    n_x: torch.Tensor | None = None
    y_rec: torch.Tensor | None = None
    x_s_syn: torch.Tensor | None = None
    y_s_syn: torch.Tensor | None = None
    y_u_syn: torch.Tensor | None = None

    def fakes(self) -> list[torch.Tensor]:
        """Synthetic images shown to the discriminator, in a fixed order."""
        return [getattr(self, name) for name in self.fake_names()]

    def fake_names(self) -> list[str]:
        return [name for name in FAKE_ORDER if getattr(self, name) is not None]

    def signals(self) -> dict[str, torch.Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name not in ("x", "y") and getattr(self, f.name) is not None}


def forward_branches(x: torch.Tensor, y: torch.Tensor, models: ModelBundle,
                     structure: BranchStructure = FULL) -> SynthesisBundle:
    """Compute every intermediate signal for a batch of clean ``x`` and noisy ``y``."""
    if x.shape != y.shape:
        raise ValueError(f"x {tuple(x.shape)} and y {tuple(y.shape)} must have the same shape")
    G, DN, DN0 = models.G, models.DN, models.DN0

    if (structure.self_synthesis or structure.parallel) and not structure.use_ne:
        raise ValueError("self-synthesis needs the NE module")

    # DN calls keep this order: batch-norm running statistics depend on it
    if structure.use_ne:
        n_y, _ = ne_extract(y, DN0)
    else:
        n_y = y
    y_rec = DN(y) if structure.parallel else None
    x_u_syn = generate(G, x, n_y)
    x_rec = DN(x_u_syn)
    out = SynthesisBundle(x=x, y=y, n_y=n_y, x_u_syn=x_u_syn, x_rec=x_rec, y_rec=y_rec)
    if not (structure.self_synthesis or structure.parallel):
        return out

    out.n_x, _ = ne_extract(x_u_syn, DN0)
    if structure.self_synthesis:
        out.x_s_syn = generate(G, x_rec, out.n_x)
    if structure.parallel:
        out.y_s_syn = generate(G, out.y_rec, n_y)
        out.y_u_syn = generate(G, out.y_rec, out.n_x)
    return out


def dump_bundle(bundle: SynthesisBundle, directory, index: int = 0) -> list[Path]:
    """Write each signal of batch entry ``index`` as an 8-bit PNG tile.

    Noise maps are shifted by 0.5 so that zero noise is mid-gray.
    """
    from .data import save_png

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    named = {"x": bundle.x, "y": bundle.y, **bundle.signals()}
    for name, t in named.items():
        img = t[index].detach().double().cpu().numpy()
        if name.startswith("n_"):
            img = img + 0.5
        path = directory / f"{name}.png"
        save_png(np.clip(img, 0.0, 1.0), path)
        paths.append(path)
    return paths
