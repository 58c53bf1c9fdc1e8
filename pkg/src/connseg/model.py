"""Toy-scale 3-D encoder-decoder with a 26-channel connectivity head.

Torch supplies autograd and the convolution kernels. The Dice connectivity
loss, the Adam update and the checkpoint format are implemented here.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InputError, NumericError, VolumeIOError

CHECKPOINT_FORMAT = "connseg-checkpoint"


@dataclass
class ModelConfig:
    scales: int = 4
    base_channels: int = 8
    in_channels: int = 1
    aux_channels: int = 4
    out_channels: int = 26
    batchnorm: bool = True
    bn_eps: float = 1e-5
    # Keras convention: running = momentum * running + (1 - momentum) * batch
    bn_momentum: float = 0.9

    def __post_init__(self):
        if self.scales < 2:
            raise InputError(f"scales must be >= 2, got {self.scales}")
        if self.base_channels < 1 or self.out_channels < 1:
            raise InputError("channel counts must be positive")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise InputError(f"bn_momentum must lie in [0, 1), got {self.bn_momentum}")

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * 2**k for k in range(self.scales)]

    @property
    def divisor(self) -> int:
        return 2 ** (self.scales - 1)


class ConvBlock(nn.Sequential):
    """Two rounds of 3x3x3 conv, batch norm, ReLU."""

    def __init__(self, cin: int, cout: int, cfg: ModelConfig):
        layers = []
        for c in (cin, cout):
            layers.append(nn.Conv3d(c, cout, kernel_size=3, padding=1))
            if cfg.batchnorm:
                layers.append(nn.BatchNorm3d(cout, eps=cfg.bn_eps, momentum=1.0 - cfg.bn_momentum))
            else:
                layers.append(nn.Identity())
            layers.append(nn.ReLU())
        super().__init__(*layers)


class ConnectivityUNet(nn.Module):
    """U-Net style network predicting per-voxel connectivity probabilities.

    The contracting path applies a :class:`ConvBlock` per scale with 2x max
    pooling in between. The expansive path upsamples trilinearly, concatenates
    the skip features and applies another block. At full resolution the
    auxiliary channels (3 coordinates + lung distance) are concatenated
    before the last block. A 1x1x1 convolution and a sigmoid produce the
    output.

    Intensity input is expected on the 0..255 scale and divided by 255
    internally.
    """

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        w = cfg.widths
        self.encoders = nn.ModuleList(
            ConvBlock(cfg.in_channels if k == 0 else w[k - 1], w[k], cfg) for k in range(cfg.scales)
        )
        self.decoders = nn.ModuleList(
            ConvBlock(w[k] + w[k + 1] + (cfg.aux_channels if k == 0 else 0), w[k], cfg)
            for k in range(cfg.scales - 1)
        )
        self.head = nn.Conv3d(w[0], cfg.out_channels, kernel_size=1)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv3d):
                fan_in = m.in_channels * math.prod(m.kernel_size)
                gain = 1.0 if m is self.head else 2.0
                with torch.no_grad():
                    m.weight.normal_(0.0, math.sqrt(gain / fan_in), generator=g)
                    m.bias.zero_()

    def forward(self, image: torch.Tensor, aux: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if image.ndim != 5 or aux.ndim != 5:
            raise InputError("image and aux must be (B, C, z, h, w) tensors")
        spatial = tuple(image.shape[2:])
        if tuple(aux.shape[2:]) != spatial or aux.shape[0] != image.shape[0]:
            raise InputError(f"aux shape {tuple(aux.shape)} does not match image {tuple(image.shape)}")
        if aux.shape[1] != cfg.aux_channels or image.shape[1] != cfg.in_channels:
            raise InputError("unexpected channel count for image or aux")
        if any(n % cfg.divisor for n in spatial):
            raise InputError(f"spatial dims {spatial} must be divisible by {cfg.divisor}")

        x = image / 255.0
        skips = []
        for k, enc in enumerate(self.encoders):
            x = enc(x)
            if k < cfg.scales - 1:
                skips.append(x)
                x = F.max_pool3d(x, 2)
        for k in reversed(range(cfg.scales - 1)):
            x = F.interpolate(x, scale_factor=2, mode="trilinear", align_corners=False)
            parts = [skips[k], x] + ([aux] if k == 0 else [])
            x = self.decoders[k](torch.cat(parts, dim=1))
        out = torch.sigmoid(self.head(x))
        if not torch.isfinite(out).all():
            raise NumericError("non-finite values in network output")
        return out


@dataclass
class LossValue:
    loss: torch.Tensor
    terms: torch.Tensor  # per-channel Dice, averaged over the batch
    eps: float

    @property
    def value(self) -> float:
        return float(self.loss.detach())


def dice_connectivity_loss(p, y, eps: float = 1e-7) -> LossValue:
    """One minus the channel-averaged soft Dice between ``p`` and ``y``.

    Accepts ``(C, z, h, w)`` or ``(B, C, z, h, w)``; sums run over each cube's
    voxels and batch entries are averaged. ``eps`` only enters the
    denominator, so a channel whose label and prediction are both empty
    scores 0, not 1.
    """
    if not eps > 0:
        raise InputError(f"eps must be positive, got {eps}")
    p = torch.as_tensor(p)
    if not p.is_floating_point():
        p = p.double()
    y = torch.as_tensor(y).to(p.dtype)
    if p.shape != y.shape:
        raise InputError(f"prediction shape {tuple(p.shape)} != label shape {tuple(y.shape)}")
    if p.ndim == 4:
        p, y = p[None], y[None]
    if p.ndim != 5:
        raise InputError("expected (C,z,h,w) or (B,C,z,h,w) inputs")
    dims = (2, 3, 4)
    inter = (p * y).sum(dim=dims)
    denom = (p + y).sum(dim=dims) + eps
    terms = 2.0 * inter / denom
    loss = 1.0 - terms.mean(dim=1).mean()
    return LossValue(loss, terms.mean(dim=0).detach(), eps)


def compute_gradients(model: ConnectivityUNet, image, aux, target, eps: float = 1e-7):
    """Forward in train mode, back-propagate the loss, return loss and grads."""
    model.train()
    model.zero_grad(set_to_none=True)
    lv = dice_connectivity_loss(model(image, aux), target, eps)
    lv.loss.backward()
    grads = {}
    for name, prm in model.named_parameters():
        g = prm.grad if prm.grad is not None else torch.zeros_like(prm)
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
        grads[name] = g
    return lv, grads


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    with torch.no_grad():
        for name, g in grads.items():
            p = params[name]
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.sub_(state.lr * (m / c1) / ((v / c2).sqrt() + state.eps))
            if not torch.isfinite(p).all():
                raise NumericError(f"parameter {name} became non-finite")
    return state


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(stem, model: ConnectivityUNet, adam: AdamState, meta: dict | None = None) -> None:
    """Write ``<stem>.json`` (manifest) and ``<stem>.bin`` (float32 LE arrays).

    Arrays appear in manifest order: model state (weights, biases, batch-norm
    statistics) followed by Adam's first and second moments.
    """
    stem = Path(stem)
    entries, chunks, offset = [], [], 0

    def add(name, tensor):
        nonlocal offset
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes

    for name, t in model.state_dict().items():
        add(f"model/{name}", t)
    for name in sorted(adam.m):
        add(f"adam_m/{name}", adam.m[name])
        add(f"adam_v/{name}", adam.v[name])

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "dtype": "f32",
        "byte_order": "little",
        "config": asdict(model.config),
        "adam": {k: getattr(adam, k) for k in ("lr", "beta1", "beta2", "eps", "step")},
        "arrays": entries,
        "meta": meta or {},
    }
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".bin").write_bytes(b"".join(chunks))
        stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise VolumeIOError(f"cannot write checkpoint {stem}: {exc}") from exc


def load_checkpoint(stem) -> tuple[ConnectivityUNet, AdamState, dict]:
    stem = Path(stem)
    try:
        manifest = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
        blob = stem.with_suffix(".bin").read_bytes()
    except OSError as exc:
        raise VolumeIOError(f"cannot read checkpoint {stem}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed checkpoint manifest {stem}.json: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{stem}.json is not a connseg checkpoint")

    arrays = {}
    for e in manifest["arrays"]:
        n = math.prod(e["shape"])
        end = e["offset"] + 4 * n
        if end > len(blob):
            raise InputError(f"checkpoint payload truncated at {e['name']}")
        arrays[e["name"]] = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"]).reshape(e["shape"])

    model = ConnectivityUNet(ModelConfig(**manifest["config"]))
    state = {}
    for name, ref in model.state_dict().items():
        state[name] = torch.from_numpy(arrays[f"model/{name}"].copy()).to(ref.dtype)
    model.load_state_dict(state)
    adam = AdamState(**manifest["adam"])
    params = dict(model.named_parameters())
    for name in params:
        if f"adam_m/{name}" in arrays:
            adam.m[name] = torch.from_numpy(arrays[f"adam_m/{name}"].copy())
            adam.v[name] = torch.from_numpy(arrays[f"adam_v/{name}"].copy())
    return model, adam, manifest.get("meta", {})
