"""Training loop and tiled inference around :class:`ConnectivityUNet`."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from .connectivity import decode_connectivity
from .errors import InputError
from .fuzzyconn import AffinityParams, consolidate_candidates
from .model import AdamState, ConnectivityUNet, ModelConfig, adam_step, compute_gradients
from .preprocess import lung_bbox
from .tiler import (
    TEST_SPEC,
    TRAIN_SPEC,
    Sample,
    SamplingPolicy,
    TileSpec,
    aux_channels,
    normalize_distance,
    plan_tiles,
    sample_training_cubes,
    stitch_predictions,
    tile_slices,
)
from .voxelcore import check_same_shape

log = logging.getLogger(__name__)

TARGETS = ("connectivity", "mask")


@dataclass
class Case:
    """One preprocessed scan: normalised intensities, lung mask, distance map."""

    image: np.ndarray
    lung: np.ndarray
    distance: np.ndarray
    airway: np.ndarray | None = None
    name: str = "case"

    def __post_init__(self):
        arrays = {"image": self.image, "lung": self.lung, "distance": self.distance}
        if self.airway is not None:
            arrays["airway"] = self.airway
        check_same_shape(**arrays)


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 4
    samples_per_epoch: int = 500
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    dice_eps: float = 1e-7
    seed: int = 0
    target: str = "connectivity"
    shuffle_buffer: int = 64
    tiles: TileSpec = TRAIN_SPEC
    policy: SamplingPolicy = field(default_factory=SamplingPolicy)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.target not in TARGETS:
            raise InputError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.samples_per_epoch < 1:
            raise InputError("epochs >= 0, batch_size >= 1 and samples_per_epoch >= 1 required")
        if any(c % self.model.divisor for c in self.tiles.cube_size):
            raise InputError(f"cube size {self.tiles.cube_size} must be divisible by {self.model.divisor}")
        expected = 26 if self.target == "connectivity" else 1
        if self.model.out_channels != expected:
            raise InputError(f"target {self.target!r} needs {expected} output channels")


def model_config_for(target: str, **kwargs) -> ModelConfig:
    return ModelConfig(out_channels=26 if target == "connectivity" else 1, **kwargs)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def epoch_samples(cases: Sequence[Case], cfg: TrainConfig, epoch: int) -> Iterator[Sample]:
    """The deterministic sample stream of one epoch.

    Passes over all cases repeat, each with a fresh seed, until
    ``samples_per_epoch`` samples were drawn; a bounded shuffle buffer mixes
    neighbouring tiles.
    """
    rng = np.random.default_rng(_seed(cfg.seed, epoch, 0xB0F))

    def stream():
        n = 0
        for rep in range(10**9):
            got = 0
            for k, case in enumerate(cases):
                for s in sample_training_cubes(
                    case.image, case.airway, case.lung, case.distance,
                    cfg.tiles, cfg.policy, _seed(cfg.seed, epoch, rep, k), cfg.target,
                ):
                    yield s
                    got += 1
                    n += 1
                    if n == cfg.samples_per_epoch:
                        return
            if got == 0:
                raise InputError("sampling policy keeps no training cubes")

    buf: list[Sample] = []
    for s in stream():
        buf.append(s)
        if len(buf) >= cfg.shuffle_buffer:
            yield buf.pop(int(rng.integers(len(buf))))
    while buf:
        yield buf.pop(int(rng.integers(len(buf))))


def _batches(samples: Iterator[Sample], size: int):
    batch = []
    for s in samples:
        batch.append(s)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def _to_tensors(batch: list[Sample], dtype=torch.float32):
    image = torch.from_numpy(np.stack([s.image for s in batch])[:, None]).to(dtype)
    aux = torch.from_numpy(np.stack([s.aux for s in batch])).to(dtype)
    label = torch.from_numpy(np.stack([s.label for s in batch])).to(dtype)
    return image, aux, label


def train(
    cases: Sequence[Case],
    cfg: TrainConfig,
    model: ConnectivityUNet | None = None,
    adam: AdamState | None = None,
    start_epoch: int = 0,
    on_epoch: Callable[[int, float, ConnectivityUNet, AdamState], None] | None = None,
) -> tuple[ConnectivityUNet, AdamState, list[float]]:
    """Train with the Dice connectivity loss; returns model, optimiser, epoch losses.

    Epoch ``e`` always sees the same samples in the same order, so resuming
    from a checkpoint written after epoch ``e - 1`` continues the run exactly.
    """
    if not cases:
        raise InputError("no training cases")
    for c in cases:
        if c.airway is None:
            raise InputError(f"case {c.name} has no airway ground truth")
    model = model or ConnectivityUNet(cfg.model, seed=cfg.seed)
    adam = adam or AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    params = dict(model.named_parameters())
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        losses = []
        for batch in _batches(epoch_samples(cases, cfg, epoch), cfg.batch_size):
            image, aux, label = _to_tensors(batch)
            lv, grads = compute_gradients(model, image, aux, label, cfg.dice_eps)
            adam_step(params, grads, adam)
            losses.append(lv.value)
        mean = float(np.mean(losses))
        history.append(mean)
        log.info("epoch %d: mean loss %.5f over %d batches", epoch + 1, mean, len(losses))
        if on_epoch is not None:
            on_epoch(epoch + 1, mean, model, adam)
    return model, adam, history


@torch.no_grad()
def predict_volume(model: ConnectivityUNet, case: Case, spec: TileSpec = TEST_SPEC, batch_size: int = 2) -> np.ndarray:
    """Stitched ``(C, Z, H, W)`` probabilities over the lung bounding box."""
    model.eval()
    if any(c % model.config.divisor for c in spec.cube_size):
        raise InputError(f"cube size {spec.cube_size} must be divisible by {model.config.divisor}")
    bbox = lung_bbox(case.lung)
    dnorm = normalize_distance(case.distance)
    origins = plan_tiles(case.image.shape, bbox, spec)
    tiles = []
    for k in range(0, len(origins), batch_size):
        chunk = origins[k : k + batch_size]
        img = np.stack([case.image[tile_slices(o, spec.cube_size)] for o in chunk])[:, None]
        aux = np.stack([aux_channels(o, spec.cube_size, bbox, dnorm) for o in chunk])
        out = model(torch.from_numpy(img.astype(np.float32)), torch.from_numpy(aux)).numpy()
        tiles.extend(zip(chunk, out))
    return stitch_predictions(tiles, case.image.shape, bbox).astype(np.float32)


@dataclass
class Segmentation:
    probability: np.ndarray
    decoded: np.ndarray  # candidates after lung masking
    final: np.ndarray  # after fuzzy connectedness (== decoded when skipped)


def segment(
    model: ConnectivityUNet,
    case: Case,
    fc_image: np.ndarray | None = None,
    spec: TileSpec = TEST_SPEC,
    threshold: float = 0.5,
    fc: AffinityParams | None = AffinityParams(),
) -> Segmentation:
    """Full inference: tiles, stitching, decoding, lung masking, consolidation.

    ``fc=None`` skips fuzzy connectedness. ``fc_image`` defaults to the
    case's normalised intensities.
    """
    prob = predict_volume(model, case, spec)
    if prob.shape[0] == 26:
        cand = decode_connectivity(prob, threshold)
    else:
        if not 0.0 < threshold < 1.0:
            raise InputError(f"threshold must lie in (0, 1), got {threshold}")
        cand = prob[0] >= threshold
    lung = np.asarray(case.lung, dtype=bool)
    cand &= lung
    if fc is None:
        final = cand.copy()
    else:
        final = consolidate_candidates(cand, case.image if fc_image is None else fc_image, lung, fc)
    return Segmentation(prob, cand, final)
