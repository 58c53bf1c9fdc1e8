"""
A miniature training run
========================

Trains the network on one phantom and segments another, all in memory.
Eight short epochs take about two minutes on one CPU. The command line
run in the README uses two training phantoms and fifteen epochs.
"""

import time

import torch

from connseg.fuzzyconn import AffinityParams
from connseg.metrics import evaluate, format_table
from connseg.phantom import PhantomConfig, generate
from connseg.preprocess import clip_normalize, distance_transform, extract_lung_mask
from connseg.tiler import TileSpec
from connseg.training import Case, TrainConfig, model_config_for, segment, train

torch.set_num_threads(1)


def make_case(seed):
    ct, airway, _ = generate(PhantomConfig(seed=seed))
    lung = extract_lung_mask(ct.data)
    return Case(clip_normalize(ct.data), lung, distance_transform(lung), airway, name=f"seed{seed}")


train_case, test_case = make_case(1), make_case(0)

# %%
# Training samples cubes around the lung, encodes their airway labels as
# connectivity and minimises one minus the channel-averaged Dice.
cfg = TrainConfig(
    epochs=8, samples_per_epoch=200, lr=3e-3, tiles=TileSpec((16, 32, 32), (4, 8, 8)),
    model=model_config_for("connectivity"),
)
t = time.perf_counter()
model, _, history = train([train_case], cfg, on_epoch=lambda e, loss, m, a: print(f"epoch {e}: loss {loss:.4f}"))
print(f"trained in {time.perf_counter() - t:.0f}s")

# %%
# Inference tiles the lung box, averages overlaps, decodes the 26 channels
# and consolidates with fuzzy connectedness.
seg = segment(model, test_case, spec=TileSpec((16, 32, 32), (8, 16, 16)), fc=AffinityParams())
rows = {"decoded": evaluate(seg.decoded, test_case.airway), "consolidated": evaluate(seg.final, test_case.airway)}
print(format_table(rows))
