"""Acceptance suite: thirteen end-to-end and oracle checks.

Each test reports a single PASS/FAIL line (see ``conftest.py``). Timings
cover the library calls under test, not the reference oracles, which are
deliberately naive.

Run just this file with ``pytest tests/test_acceptance.py``; add
``-m "not slow"`` to skip the end-to-end phantom training run.
"""

import csv
import itertools
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from connseg import (
    complement_index,
    decode_connectivity,
    encode_connectivity,
    neighbor_offsets,
    pairwise_agreement_filter,
)
from connseg.cli import main as cli
from connseg.fuzzyconn import AffinityParams, connectedness_map
from connseg.metrics import evaluate
from connseg.model import ConnectivityUNet, ModelConfig, compute_gradients, dice_connectivity_loss
from connseg.preprocess import connected_components_3d, distance_transform
from connseg.tiler import TileSpec, plan_tiles, stitch_predictions, tile_slices
from connseg.volio import read_volume, write_volume
from oracles import (
    components_union_find,
    dice_loss_loops,
    drop_isolated,
    edt_squared_brute,
    fc_bellman_ford,
    fc_paths_exhaustive,
    finite_difference_errors,
    random_masks,
)


def _mask_corpus():
    grid = [np.array(bits, bool).reshape(3, 3, 1) for bits in itertools.product((0, 1), repeat=9)]
    return grid + list(random_masks(np.random.default_rng(2024), 1000, max_side=8))


@pytest.fixture(scope="module")
def corpus():
    masks = _mask_corpus()
    assert len(masks) == 1512
    return masks


@pytest.mark.criterion(1, "connectivity roundtrip")
def test_connectivity_roundtrip(corpus, verdict):
    bad, elapsed = 0, 0.0
    for m in corpus:
        t = time.perf_counter()
        back = decode_connectivity(encode_connectivity(m), 0.5)
        elapsed += time.perf_counter() - t
        bad += not np.array_equal(back, drop_isolated(m))
    verdict(bad == 0 and elapsed < 10, f"{len(corpus) - bad}/{len(corpus)} masks exact, {elapsed:.2f}s")


@pytest.mark.criterion(2, "pairwise-agreement soundness")
def test_agreement_soundness(corpus, verdict):
    bad, elapsed = 0, 0.0
    for m in corpus:
        cube = encode_connectivity(m)
        t = time.perf_counter()
        once = pairwise_agreement_filter(cube)
        twice = pairwise_agreement_filter(once)
        elapsed += time.perf_counter() - t
        bad += not (np.array_equal(once, cube) and np.array_equal(twice, once))
    verdict(bad == 0 and elapsed < 10, f"{len(corpus) - bad}/{len(corpus)} identity+idempotent, {elapsed:.2f}s")


@pytest.mark.criterion(3, "complement scheme")
def test_complement_scheme(verdict):
    offs = neighbor_offsets()
    pairs_ok = all(
        tuple(-v for v in offs.offset(i)) == offs.offset(27 - i) and complement_index(i) == 27 - i
        for i in range(1, 27)
    )
    z_ok = offs.offset(13) == (0, 0, -1) and offs.offset(14) == (0, 0, 1)
    verdict(pairs_ok and z_ok, f"26 pairs negate: {pairs_ok}, ch13={offs.offset(13)}, ch14={offs.offset(14)}")


@pytest.mark.criterion(4, "Dice connectivity loss oracle")
def test_loss_oracle(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        p = rng.random((26, 4, 4, 4))
        y = (rng.random((26, 4, 4, 4)) < rng.uniform(0.1, 0.9)).astype(np.float64)
        got = dice_connectivity_loss(torch.from_numpy(p), torch.from_numpy(y), eps=1e-7).value
        worst = max(worst, abs(got - dice_loss_loops(p, y, 1e-7)))
    p = torch.zeros(26, 1, 1, 1, dtype=torch.float64)
    y = torch.zeros_like(p)
    p[0], y[0] = 0.5, 1.0
    hand = abs(dice_connectivity_loss(p, y, eps=1e-15).value - (1 - 1 / 39))
    verdict(worst <= 1e-12 and hand <= 1e-12, f"max |diff| {worst:.1e} on 20 cubes, hand case |diff| {hand:.1e}")


@pytest.mark.criterion(5, "gradient check")
def test_gradient_check(verdict):
    t = time.perf_counter()
    m = ConnectivityUNet(ModelConfig(scales=2, base_channels=4), seed=1).double()
    g = torch.Generator().manual_seed(0)
    img = torch.rand(1, 1, 8, 8, 8, generator=g, dtype=torch.float64) * 255
    aux = torch.rand(1, 4, 8, 8, 8, generator=g, dtype=torch.float64)
    y = (torch.rand(1, 26, 8, 8, 8, generator=g) < 0.3).double()
    _, grads = compute_gradients(m, img, aux, y)

    def loss():
        with torch.no_grad():
            return dice_connectivity_loss(m(img, aux), y).value

    errs = finite_difference_errors(m, loss, grads, n_params=120, h=1e-4, seed=0)
    elapsed = time.perf_counter() - t
    verdict(max(errs) <= 1e-4 and elapsed < 120, f"max rel err {max(errs):.1e} over {len(errs)} params, {elapsed:.1f}s")


@pytest.mark.criterion(6, "EDT oracle")
def test_edt_oracle(verdict):
    bad, elapsed = 0, 0.0
    masks = list(random_masks(np.random.default_rng(6), 500, max_side=8))
    for m in masks:
        t = time.perf_counter()
        d = distance_transform(m)
        elapsed += time.perf_counter() - t
        want = edt_squared_brute(m)
        bad += not (np.array_equal(np.rint(d**2).astype(np.int64), want) and np.abs(d**2 - want).max() < 1e-9)
    verdict(bad == 0 and elapsed < 30, f"{500 - bad}/500 masks exact, {elapsed:.2f}s")


@pytest.mark.criterion(7, "fuzzy connectedness oracle")
def test_fc_oracle(verdict):
    rng = np.random.default_rng(7)
    params = AffinityParams(sigma=2.0, theta=0.5)
    n = exhaustive = 0
    worst, elapsed = 0.0, 0.0
    while n < 200:
        shape = tuple(int(s) for s in rng.integers(1, 6, size=3))
        region = rng.random(shape) < rng.uniform(0.1, 1.0)
        seeds = region & (rng.random(shape) < 0.2)
        if not seeds.any():
            continue
        img = rng.random(shape) * 5.0
        t = time.perf_counter()
        got = connectedness_map(img, seeds, region, params)
        elapsed += time.perf_counter() - t
        worst = max(worst, float(np.abs(got - fc_bellman_ford(img, seeds, region, 2.0)).max()))
        if region.sum() <= 9:
            worst = max(worst, float(np.abs(got - fc_paths_exhaustive(img, seeds, region, 2.0)).max()))
            exhaustive += 1
        n += 1
    verdict(
        worst <= 1e-9 and elapsed < 60,
        f"max |diff| {worst:.1e} on {n} volumes ({exhaustive} by full path enumeration), {elapsed:.2f}s",
    )


@pytest.mark.criterion(8, "connected components oracle")
def test_components_oracle(verdict):
    rng = np.random.default_rng(8)
    bad, elapsed = 0, 0.0
    for _ in range(500):
        m = rng.random((6, 6, 6)) < rng.uniform(0.05, 0.5)
        t = time.perf_counter()
        labels, sizes = connected_components_3d(m)
        elapsed += time.perf_counter() - t
        got = {frozenset(map(tuple, np.argwhere(labels == k))) for k in range(1, len(sizes) + 1)}
        bad += got != components_union_find(m)
    verdict(bad == 0 and elapsed < 10, f"{500 - bad}/500 partitions equal, {elapsed:.2f}s")


def _tiling_ok(rng) -> bool:
    shape = tuple(int(s) for s in rng.integers(4, 30, size=3))
    cube = tuple(int(rng.integers(1, s + 1)) for s in shape)
    stride = tuple(int(rng.integers(1, c + 1)) for c in cube)
    bbox = []
    for n in shape:
        a = int(rng.integers(0, n))
        bbox.append((a, int(rng.integers(a + 1, n + 1))))
    spec = TileSpec(cube, stride)
    origins = plan_tiles(shape, bbox, spec)
    covered = np.zeros(shape, bool)
    for o in origins:
        if any(v < 0 or v + c > n for v, c, n in zip(o, cube, shape)):
            return False
        covered[tile_slices(o, cube)] = True
    box = tuple(slice(a, b) for a, b in bbox)
    if not covered[box].all():
        return False
    for axis in range(3):
        axis_origins = sorted({o[axis] for o in origins})
        start, stop = bbox[axis]
        if stop - start >= cube[axis] and axis_origins[-1] + cube[axis] != stop:
            return False  # last tile must end on the box edge
        if any(b - a > stride[axis] for a, b in zip(axis_origins, axis_origins[1:])):
            return False
    c = float(rng.random())
    tiles = [(o, np.full((2, *cube), c)) for o in origins]
    stitched = stitch_predictions(tiles, shape, bbox)
    return bool((stitched[:, covered] == c).all())


@pytest.mark.criterion(9, "tiling and stitching")
def test_tiling(verdict):
    rng = np.random.default_rng(9)
    results = [_tiling_ok(rng) for _ in range(100)]
    verdict(all(results), f"{sum(results)}/100 geometries covered, clamped and stitched exactly")


# -- end-to-end phantom runs ------------------------------------------------------

DESK_TRAIN = [
    "--epochs", "15", "--samples-per-epoch", "200", "--batch-size", "4", "--lr", "3e-3",
    "--cube-size", "16,32,32", "--train-stride", "4,8,8", "--seed", "0",
]


def _run(*argv) -> None:
    code = cli([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"connseg {argv[0]} exited with {code}")


def _metrics(csv_path: Path) -> dict:
    with open(csv_path, newline="") as fh:
        return next(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    t = time.perf_counter()
    for seed in (0, 1, 2):
        _run("phantom", "--seed", seed, "--out-prefix", root / f"s{seed}")
        _run("preprocess", "--ct", root / f"s{seed}_ct", "--out", root / f"prep{seed}")
    _run("train", "--prep", root / "prep1", "--gt", root / "s1_airway", "--prep", root / "prep2",
         "--gt", root / "s2_airway", "--out", root / "model", *DESK_TRAIN)
    _run("predict", "--prep", root / "prep0", "--checkpoint", root / "model" / "checkpoint",
         "--out", root / "pred", "--save-intermediate")
    _run("evaluate", "--pred", root / "pred" / "prediction", "--gt", root / "s0_airway", "--name", "s0",
         "--csv", root / "metrics.csv")
    return root, time.perf_counter() - t


@pytest.mark.slow
@pytest.mark.criterion(10, "end-to-end phantom run")
def test_end_to_end(pipeline, verdict):
    root, elapsed = pipeline
    row = _metrics(root / "metrics.csv")
    dsc, tpr = float(row["dsc"]), float(row["tpr"])
    verdict(
        dsc >= 0.75 and tpr >= 0.70 and elapsed < 15 * 60,
        f"DSC {dsc:.3f}, TPR {tpr:.3f}, {elapsed / 60:.1f} min",
    )


@pytest.mark.slow
@pytest.mark.criterion(11, "ablation switches")
def test_ablations(pipeline, verdict):
    root, _ = pipeline
    _run("predict", "--prep", root / "prep0", "--checkpoint", root / "model" / "checkpoint",
         "--out", root / "pred_nofc", "--no-fc")
    full = read_volume(root / "pred" / "prediction")[1].astype(bool)
    nofc = read_volume(root / "pred_nofc" / "prediction")[1].astype(bool)
    strict_subset = not (nofc & ~full).any() and int(full.sum()) > int(nofc.sum())

    _run("train", "--prep", root / "prep1", "--gt", root / "s1_airway", "--out", root / "model_nc", "--no-conn",
         "--epochs", "2", "--samples-per-epoch", "40", "--lr", "3e-3", "--cube-size", "16,32,32",
         "--train-stride", "4,8,8")
    _run("predict", "--prep", root / "prep0", "--checkpoint", root / "model_nc" / "checkpoint",
         "--out", root / "pred_nc", "--save-intermediate")
    _run("evaluate", "--pred", root / "pred_nc" / "prediction", "--gt", root / "s0_airway",
         "--csv", root / "metrics_nc.csv")
    header = read_volume(root / "pred_nc" / "probability")[0]
    nc_ok = header.channels == 1 and (root / "metrics_nc.csv").exists()
    verdict(
        strict_subset and nc_ok,
        f"--no-fc {int(nofc.sum())} voxels within full {int(full.sum())}; "
        f"--no-conn trained 1-channel model, DSC {float(_metrics(root / 'metrics_nc.csv')['dsc']):.3f}",
    )


@pytest.mark.criterion(12, "metrics identity")
def test_metrics_identity(verdict):
    rng = np.random.default_rng(12)
    worst, defined = 0.0, 0
    for _ in range(1000):
        shape = tuple(int(s) for s in rng.integers(1, 7, size=3))
        a = rng.random(shape) < rng.uniform(0, 1)
        b = rng.random(shape) < rng.uniform(0, 1)
        m = evaluate(a, b)
        if m.ppv and m.tpr:
            defined += 1
            worst = max(worst, abs(m.dsc - 2 * m.ppv * m.tpr / (m.ppv + m.tpr)))
    gt = np.zeros((10, 10, 10), bool)
    gt[0, 0, :8] = True
    pred = gt.copy()
    pred[9, 9, 8:] = True
    h = evaluate(pred, gt)
    hand = (h.tp, h.fp, h.fn, h.tn) == (8, 2, 0, 990) and h.dsc == 16 / 18 and h.ppv == 0.8 and h.tpr == 1.0
    verdict(worst <= 1e-12 and hand, f"max |diff| {worst:.1e} on {defined} defined pairs, hand case exact: {hand}")


@pytest.mark.criterion(13, "volume I/O roundtrip")
def test_io_roundtrip(tmp_path, verdict):
    rng = np.random.default_rng(13)
    cases = [
        ("intensity", "f32", rng.normal(size=(5, 6, 7)).astype(np.float32)),
        ("intensity", "u8", rng.integers(0, 256, (5, 6, 7)).astype(np.uint8)),
        ("mask", "u8", (rng.random((5, 6, 7)) < 0.5).astype(np.uint8)),
        ("mask", "f32", (rng.random((5, 6, 7)) < 0.5).astype(np.float32)),
        ("distance", "f32", (rng.random((5, 6, 7)) * 10).astype(np.float32)),
        ("distance", "u8", rng.integers(0, 9, (5, 6, 7)).astype(np.uint8)),
        ("probability", "f32", rng.random((5, 6, 7)).astype(np.float32)),
        ("probability", "f32", rng.random((26, 5, 6, 7)).astype(np.float32)),
        ("mask", "u8", encode_connectivity(rng.random((5, 6, 7)) < 0.6)),
        ("intensity", "f32", np.array([np.nan, np.inf, -0.0, 1e-45], np.float32).reshape(1, 2, 2)),
    ]
    ok = 0
    for k, (kind, dtype, data) in enumerate(cases):
        write_volume(tmp_path / f"v{k}", data, kind=kind, dtype=dtype, spacing=(2.5, 0.5, 0.75))
        first = (tmp_path / f"v{k}.raw").read_bytes(), (tmp_path / f"v{k}.json").read_bytes()
        header, back = read_volume(tmp_path / f"v{k}")
        write_volume(tmp_path / f"w{k}", back, kind=header.kind, dtype=header.dtype, spacing=header.spacing)
        second = (tmp_path / f"w{k}.raw").read_bytes(), (tmp_path / f"w{k}.json").read_bytes()
        ok += back.tobytes() == np.ascontiguousarray(data).tobytes() and first == second
    verdict(ok == len(cases), f"{ok}/{len(cases)} dtype/kind combinations bit-identical, incl. 26-channel")
