"""Generator, PatchGAN discriminator, the denoiser family and the NE module.

Networks are plain ``nn.Module`` objects wrapped in a :class:`NetworkHandle`
that carries the factory arguments, a freeze flag and a checksum, so that a
handle can be snapshotted, serialized and rebuilt exactly.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

DENOISER_VARIANTS = ("linear_conv", "dncnn_lite", "unet_lite")


class NetworkConfigError(ValueError):
    pass


class FrozenError(RuntimeError):
    """Raised when something tries to update the parameters of a frozen handle."""


# -- modules -----------------------------------------------------------------

class ResidualBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


class NoiseGenerator(nn.Module):
    """ResNet generator mapping (content, noise) to a synthetic noisy image.

    The two inputs are concatenated along channels. With ``noise_skip`` the
    network output is a correction added on top of ``content + noise``;
    either way the result goes through a hard-tanh and is rescaled to [0, 1].
    """

    def __init__(self, channels=1, width=32, blocks=6, noise_skip=True):
        super().__init__()
        self.noise_skip = noise_skip
        self.head = nn.Sequential(nn.Conv2d(2 * channels, width, 3, padding=1), nn.ReLU(inplace=True))
        self.blocks = nn.Sequential(*[ResidualBlock(width) for _ in range(blocks)])
        self.tail = nn.Conv2d(width, channels, 3, padding=1)
        nn.init.normal_(self.tail.weight, std=1e-3)
        nn.init.zeros_(self.tail.bias)

    def forward(self, inputs):
        content, noise = inputs.chunk(2, dim=1)
        residual = self.tail(self.blocks(self.head(inputs)))
        base = content + noise if self.noise_skip else content
        return (nn.functional.hardtanh(2.0 * (base + residual) - 1.0) + 1.0) / 2.0


class PatchDiscriminator(nn.Module):
    """Strided 4x4 convolutions followed by a 3x3 score head; raw (unsquashed) scores."""

    def __init__(self, channels=1, width=32, layers=3):
        super().__init__()
        seq = []
        cin = channels
        for i in range(layers):
            cout = width * min(2**i, 8)
            seq += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            cin = cout
        seq.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.seq = nn.Sequential(*seq)

    def forward(self, x):
        return self.seq(x)


class LinearConvDenoiser(nn.Module):
    """Single 3x3 convolution, no nonlinearity; output ``x - conv(x)``.

    ``init="identity"`` zeroes the conv so the map starts as the identity.
    ``init="box"`` starts it as a per-channel 3x3 mean filter, so the
    residual ``x - denoised`` is a high-pass of the input from the first step.
    """

    def __init__(self, channels=1, init="identity"):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect")
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)
        if init == "box":
            with torch.no_grad():
                for c in range(channels):
                    self.conv.weight[c, c] = -1.0 / 9.0
                    self.conv.weight[c, c, 1, 1] += 1.0

    def forward(self, x):
        return x - self.conv(x)


class DnCNNLite(nn.Module):
    def __init__(self, channels=1, width=32, depth=5):
        super().__init__()
        layers = [nn.Conv2d(channels, width, 3, padding=1), nn.ReLU(inplace=True)]
        for _ in range(depth):
            layers += [
                nn.Conv2d(width, width, 3, padding=1, bias=False),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
            ]
        layers.append(nn.Conv2d(width, channels, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return x - self.net(x)


def _double_conv(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
    )


class UNetLite(nn.Module):
    """Two-scale encoder/decoder with one skip connection; needs even h and w."""

    def __init__(self, channels=1, width=32):
        super().__init__()
        self.enc1 = _double_conv(channels, width)
        self.down = nn.AvgPool2d(2)
        self.enc2 = _double_conv(width, 2 * width)
        self.up = nn.ConvTranspose2d(2 * width, width, 2, stride=2)
        self.dec = _double_conv(2 * width, width)
        self.out = nn.Conv2d(width, channels, 1)

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ValueError("unet_lite needs even spatial dimensions")
        e1 = self.enc1(x)
        e2 = self.enc2(self.down(e1))
        d = self.dec(torch.cat([self.up(e2), e1], dim=1))
        return x - self.out(d)


# -- handles -----------------------------------------------------------------

@dataclass
class NetworkHandle:
    kind: str
    variant: str
    config: dict
    module: nn.Module
    frozen: bool = False
    seed: int = 0
    _dtype: torch.dtype = field(default=torch.float32, repr=False)

    def __call__(self, x):
        return self.module(x)

    @property
    def dtype(self):
        return self._dtype

    def freeze(self) -> "NetworkHandle":
        self.frozen = True
        self.module.eval()
        self.module.requires_grad_(False)
        return self

    def train(self, mode: bool = True) -> None:
        self.module.train(mode and not self.frozen)

    def trainable_parameters(self) -> list[nn.Parameter]:
        if self.frozen:
            raise FrozenError(f"{self.kind} handle is frozen")
        return list(self.module.parameters())

    def state(self) -> dict:
        return {k: v.detach().clone() for k, v in self.module.state_dict().items()}

    def load_state(self, state: dict) -> None:
        if self.frozen:
            raise FrozenError(f"{self.kind} handle is frozen")
        self.module.load_state_dict(state)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def checksum(self, buffers: bool = True) -> str:
        """SHA-256 over parameter (and, by default, buffer) bytes."""
        h = hashlib.sha256()
        items = self.module.state_dict().items() if buffers else self.module.named_parameters()
        for name, t in items:
            h.update(name.encode())
            h.update(t.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def snapshot(self, frozen: bool = True) -> "NetworkHandle":
        clone = NetworkHandle(self.kind, self.variant, dict(self.config), copy.deepcopy(self.module),
                              False, self.seed, self._dtype)
        clone.module.requires_grad_(True)
        if frozen:
            clone.freeze()
        return clone

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "variant": self.variant,
            "config": self.config,
            "seed": self.seed,
            "dtype": str(self._dtype).removeprefix("torch."),
            "frozen": self.frozen,
            "shapes": {k: list(v.shape) for k, v in self.module.state_dict().items()},
            "checksum": self.checksum(),
        }

    def save(self, directory, name: str) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.module.state_dict(), directory / f"{name}.pt")
        (directory / f"{name}.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))
        return directory / f"{name}.json"


def load_handle(manifest_path) -> NetworkHandle:
    """Rebuild a handle from ``<name>.json`` + ``<name>.pt`` and verify its checksum."""
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    dtype = getattr(torch, meta["dtype"])
    build = {"generator": make_generator, "discriminator": make_discriminator}
    if meta["kind"] == "denoiser":
        handle = make_denoiser(meta["variant"], meta["config"], seed=meta["seed"], dtype=dtype)
    else:
        handle = build[meta["kind"]](meta["config"], seed=meta["seed"], dtype=dtype)
    state = torch.load(manifest_path.with_suffix(".pt"), weights_only=True)
    handle.module.load_state_dict(state)
    if handle.checksum() != meta["checksum"]:
        raise ValueError(f"checksum mismatch for {manifest_path}")
    if meta["frozen"]:
        handle.freeze()
    return handle


def _positive(cfg: dict, *keys) -> None:
    for k in keys:
        v = cfg[k]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise NetworkConfigError(f"{k} must be a positive integer, got {v!r}")


def _build(kind, variant, cfg, seed, dtype, factory) -> NetworkHandle:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = factory()
    module = module.to(dtype)
    return NetworkHandle(kind, variant, cfg, module, seed=seed, _dtype=dtype)


def make_generator(cfg: dict | None = None, seed: int = 0, dtype=torch.float32) -> NetworkHandle:
    cfg = {"channels": 1, "width": 32, "blocks": 6, "noise_skip": True, **(cfg or {})}
    _positive(cfg, "channels", "width", "blocks")
    return _build("generator", "resnet", cfg, seed, dtype, lambda: NoiseGenerator(**cfg))


def make_discriminator(cfg: dict | None = None, seed: int = 0, dtype=torch.float32) -> NetworkHandle:
    cfg = {"channels": 1, "width": 32, "layers": 3, **(cfg or {})}
    _positive(cfg, "channels", "width", "layers")
    return _build("discriminator", "patchgan", cfg, seed, dtype, lambda: PatchDiscriminator(**cfg))


LINEAR_INITS = ("identity", "box")


def make_denoiser(variant: str, cfg: dict | None = None, seed: int = 0, dtype=torch.float32) -> NetworkHandle:
    if variant == "linear_conv":
        cfg = {"channels": 1, "init": "identity", **(cfg or {})}
        cfg = {"channels": cfg["channels"], "init": cfg["init"]}
        _positive(cfg, "channels")
        if cfg["init"] not in LINEAR_INITS:
            raise NetworkConfigError(f"unknown linear_conv init {cfg['init']!r}; expected one of {LINEAR_INITS}")
        factory = lambda: LinearConvDenoiser(**cfg)  # noqa: E731
    elif variant == "dncnn_lite":
        cfg = {"channels": 1, "width": 32, "depth": 5, **(cfg or {})}
        cfg = {k: cfg[k] for k in ("channels", "width", "depth")}
        _positive(cfg, "channels", "width", "depth")
        factory = lambda: DnCNNLite(**cfg)  # noqa: E731
    elif variant == "unet_lite":
        cfg = {"channels": 1, "width": 32, **(cfg or {})}
        cfg = {k: cfg[k] for k in ("channels", "width")}
        _positive(cfg, "channels", "width")
        factory = lambda: UNetLite(**cfg)  # noqa: E731
    else:
        raise NetworkConfigError(f"unknown denoiser variant {variant!r}; expected one of {DENOISER_VARIANTS}")
    return _build("denoiser", variant, cfg, seed, dtype, factory)


# -- NE module and generation ------------------------------------------------

def _wider(dtype):
    return torch.float64 if dtype in (torch.float16, torch.bfloat16, torch.float32) else dtype


def ne_extract(noisy: torch.Tensor, dn0) -> tuple[torch.Tensor, torch.Tensor]:
    """Noise extraction: ``(noisy - dn0(noisy), dn0(noisy))``.

    The residual is formed in float64 when the images are float32, which
    makes ``noise + denoised == noisy`` hold bitwise for the returned pair;
    casting the noise back to float32 gives the same value a float32
    subtraction would. Gradients flow into ``noisy`` (and into ``dn0`` unless
    it is frozen).
    """
    if isinstance(dn0, NetworkHandle) and dn0.kind != "denoiser":
        raise ValueError(f"noise extraction needs a denoiser, got a {dn0.kind}")
    denoised = dn0(noisy)
    wide = _wider(noisy.dtype)
    noise = noisy.to(wide) - denoised.to(wide)
    return noise, denoised


def generate(g, content: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """Synthetic noisy image ``G(content, noise)`` with the same shape as ``content``."""
    if content.shape != noise.shape:
        raise ValueError(f"content {tuple(content.shape)} and noise {tuple(noise.shape)} differ")
    return g(torch.cat([content, noise.to(content.dtype)], dim=1))
