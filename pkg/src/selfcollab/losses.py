"""Training objectives: least-squares adversarial terms, the multi-scale
background (blur) loss, the L1+SSIM denoiser loss and its distillation
variant used once the NE denoiser is a frozen teacher.

All norms are per-pixel means so the default weights do not depend on the
patch size.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .imaging import BlurBank, gaussian_blur, ssim_per_image


@dataclass(frozen=True)
class LossWeights:
    lambda_bgm: float = 6.0
    lambda_ssim: float = 1.0
    bank: BlurBank = field(default_factory=BlurBank)
    ssim_window: int = 11

    def __post_init__(self):
        if self.lambda_bgm < 0 or self.lambda_ssim < 0:
            raise ValueError("loss weights must be nonnegative")


# -- adversarial -------------------------------------------------------------

def lsgan_d_scores(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return torch.mean((real_scores - 1.0) ** 2) + torch.mean(fake_scores**2)


def lsgan_g_scores(fake_scores: torch.Tensor) -> torch.Tensor:
    return torch.mean((fake_scores - 1.0) ** 2)


def adv_loss_d(d, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Discriminator side: push D(real) toward 1 and D(fake) toward 0.

    ``fake`` is detached here so the discriminator step never reaches the
    generator.
    """
    return lsgan_d_scores(d(real), d(fake.detach()))


def adv_loss_g(d, fake: torch.Tensor) -> torch.Tensor:
    return lsgan_g_scores(d(fake))


def gan_total(d, real: torch.Tensor, fakes, role: str) -> torch.Tensor:
    """Sum of one adversarial term per synthetic image, all scored by the same D.

    ``role`` is ``"d"`` for the discriminator step or ``"g"`` for the
    generator step. D(real) is evaluated once and reused by every term.
    """
    if role == "d":
        real_scores = d(real)
        return sum(lsgan_d_scores(real_scores, d(f.detach())) for f in fakes)
    if role == "g":
        return sum(lsgan_g_scores(d(f)) for f in fakes)
    raise ValueError(f"role must be 'd' or 'g', got {role!r}")


# -- background guidance -----------------------------------------------------

def bgm_loss(content: torch.Tensor, synthetic: torch.Tensor, bank: BlurBank | None = None) -> torch.Tensor:
    bank = bank or BlurBank()
    if content.shape != synthetic.shape:
        raise ValueError(f"shape mismatch: {tuple(content.shape)} vs {tuple(synthetic.shape)}")
    total = content.new_zeros(())
    for size, weight in bank.levels:
        diff = gaussian_blur(content, size, size * bank.std_ratio) - gaussian_blur(synthetic, size, size * bank.std_ratio)
        total = total + weight * diff.abs().mean()
    return total


# -- denoiser ----------------------------------------------------------------

def _l1_per_image(a, b):
    return (a - b).abs().mean(dim=(1, 2, 3))


def _dn_terms(pred, target, weights: LossWeights) -> torch.Tensor:
    """Per-image bracket ``mean|pred - target| + lambda_ssim * (1 - SSIM)``, shape (m,)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    l1 = _l1_per_image(pred, target)
    if weights.lambda_ssim == 0:
        return l1
    s = ssim_per_image(pred, target, window_size=weights.ssim_window)
    return l1 + weights.lambda_ssim * (1.0 - s)


def dn_loss(pred: torch.Tensor, target: torch.Tensor, weights: LossWeights | None = None) -> torch.Tensor:
    """(1 / 2m) * sum_i [ L1_i + lambda_ssim * (1 - SSIM_i) ] over a batch of m images."""
    weights = weights or LossWeights()
    terms = _dn_terms(pred, target, weights)
    return terms.sum() / (2 * terms.shape[0])


def dn_sc_loss(x_rec, x_target, y_rec, x_u_syn, y, dn0, weights: LossWeights | None = None) -> torch.Tensor:
    """Denoiser loss with distillation toward a frozen teacher ``dn0``.

    Adds, under the same 1/2m factor, L1 + SSIM terms pulling ``x_rec``
    toward ``dn0(x_u_syn)`` and ``y_rec`` toward ``dn0(y)``.
    """
    if not getattr(dn0, "frozen", False):
        raise RuntimeError("distillation loss needs a frozen teacher denoiser")
    weights = weights or LossWeights()
    with torch.no_grad():
        teach_x = dn0(x_u_syn)
        teach_y = dn0(y)
    extra = _dn_terms(x_rec, teach_x, weights) + _dn_terms(y_rec, teach_y, weights)
    return dn_loss(x_rec, x_target, weights) + extra.sum() / (2 * extra.shape[0])


# -- composite ---------------------------------------------------------------

def bgm_pairs(bundle, mode: str = "all"):
    """(content, synthetic) pairs the background loss is applied to."""
    pairs = [(bundle.x, bundle.x_u_syn)]
    if mode == "branch2":
        if bundle.x_s_syn is not None:
            pairs.append((bundle.x_rec, bundle.x_s_syn))
        return pairs
    if mode != "all":
        raise ValueError(f"unknown bgm mode {mode!r}")
    for content, syn in ((bundle.x_rec, bundle.x_s_syn), (bundle.y_rec, bundle.y_s_syn), (bundle.y_rec, bundle.y_u_syn)):
        if syn is not None:
            pairs.append((content, syn))
    return pairs


def total_objective(player: str, bundle, d, weights: LossWeights | None = None, *,
                    use_bgm: bool = True, bgm_mode: str = "all", dn_pred=None, dn0=None,
                    y_rec=None) -> dict[str, torch.Tensor]:
    """Loss for one player, returned as ``{"total": ..., <components>...}``.

    ``"d"``: adversarial D-side sum. ``"g"``: adversarial G-side sum plus
    ``lambda_bgm`` times the summed background terms. ``"dn"``: plain
    denoiser loss on the (x_u_syn -> x) pseudo-pair, or the distillation
    loss when a frozen ``dn0`` is supplied (then ``y_rec`` is required).
    """
    weights = weights or LossWeights()
    fakes = bundle.fakes()
    if player == "d":
        adv = gan_total(d, bundle.y, fakes, "d")
        return {"total": adv, "adv_d": adv}
    if player == "g":
        adv = gan_total(d, bundle.y, fakes, "g")
        out = {"adv_g": adv}
        if use_bgm and weights.lambda_bgm:
            bgm = sum(bgm_loss(c, s, weights.bank) for c, s in bgm_pairs(bundle, bgm_mode))
            out["bgm"] = bgm
            out["total"] = adv + weights.lambda_bgm * bgm
        else:
            out["total"] = adv
        return out
    if player == "dn":
        pred = bundle.x_rec if dn_pred is None else dn_pred
        if dn0 is None:
            loss = dn_loss(pred, bundle.x, weights)
        else:
            loss = dn_sc_loss(pred, bundle.x, y_rec, bundle.x_u_syn.detach(), bundle.y, dn0, weights)
        return {"total": loss, "dn": loss}
    raise ValueError(f"unknown player {player!r}")
