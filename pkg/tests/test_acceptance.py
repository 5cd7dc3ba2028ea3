"""Acceptance criteria, one test each; every test prints a PASS/FAIL/SKIP line.

The lines are also repeated in the terminal summary under "acceptance criteria".
"""
import math
import os
import time

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE, OVERFIT_SAMPLES
from egogesture.evaluation import AblationVariant, build_variant
from egogesture.model import NetworkConfig, build, parameter_count, predict
from egogesture.pipeline import (GroundTruthDetector, coords_to_image, coords_to_normalized, detect_batch,
                                 ensemble_average, final_coordinates)
from egogesture.training.adam import Adam, OptimizerState, adam_step
from egogesture.training.losses import positional_loss, probabilistic_loss
from gradcheck_util import STEP, gradient_check
from test_dataio import PUBLISHED_SPLITS

CORPUS_ENV = "EGOGESTURE_SCUT_ROOT"


def verdict(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title}: {detail}"
    print(line)
    ACCEPTANCE[n] = line
    assert ok, line


def bce_loop(y, p, clamp=1e-7):
    total = 0.0
    for j in range(len(y)):
        for k in range(len(y[j])):
            q = min(max(float(p[j][k]), clamp), 1.0 - clamp)
            total -= y[j][k] * math.log(q) + (1 - y[j][k]) * math.log(1 - q)
    return total / (len(y) * len(y[0]))


def mse_loop(x, xh, codes):
    total = 0.0
    M, R, C = x.shape
    for j in range(M):
        for k in range(R):
            for l in range(C):
                if codes[j][l // 2]:
                    total += (float(x[j, k, l]) - float(xh[j, k, l])) ** 2
    return total / (R * C * M)


def t64(a):
    return torch.as_tensor(a, dtype=torch.float64)


def test_c01_loss_oracles():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 5))
        y = rng.integers(0, 2, (m, 5)).astype(float)
        p = rng.random((m, 5))
        x, xh = rng.random((m, 10, 10)), rng.random((m, 10, 10))
        codes = rng.integers(0, 2, (m, 5))
        codes[0, rng.integers(5)] = 1
        l1 = probabilistic_loss(t64(y), t64(p)).item()
        l2 = positional_loss(t64(x), t64(xh), t64(codes)).item()
        r1, r2 = bce_loop(y, p), mse_loop(x, xh, codes)
        worst = max(worst, abs(l1 - r1) / abs(r1), abs(l2 - r2) / abs(r2))
    elapsed = time.perf_counter() - t0
    verdict(1, "loss oracles", worst < 1e-6 and elapsed < 5.0,
            f"max relative error {worst:.2e} (< 1e-6) on 50 batches in {elapsed:.2f} s (< 5 s)")


def test_c02_masking_invariance():
    rng = np.random.default_rng(2)
    changed = 0
    for _ in range(100):
        m = int(rng.integers(1, 6))
        codes = rng.integers(0, 2, (m, 5))
        codes[:, 0] = 0
        x, xh = rng.random((m, 10, 10)), rng.random((m, 10, 10))
        hidden = np.repeat(codes == 0, 2, axis=1)[:, None, :].repeat(10, axis=1)
        bumped = xh + hidden * rng.normal(0.0, 10.0, xh.shape)
        a = positional_loss(t64(x), t64(xh), t64(codes)).item()
        b = positional_loss(t64(x), t64(bumped), t64(codes)).item()
        changed += a != b
    verdict(2, "masking invariance", changed == 0, f"{changed} of 100 hidden-column perturbations changed L2")


def test_c03_gradient_check():
    t0 = time.perf_counter()
    checks, skipped = gradient_check(n_params=10, seed=0, step=STEP)
    elapsed = time.perf_counter() - t0
    worst = max(c[4] for c in checks)
    verdict(3, "gradient check", len(checks) == 10 and worst < 1e-3 and elapsed < 60.0,
            f"max relative error {worst:.2e} (< 1e-3) at {len(checks)} parameters in {len(checks)} tensors, "
            f"step {STEP}, {skipped} kink-straddling probes redrawn, {elapsed:.1f} s (< 60 s)")


def test_c04_adam_fidelity():
    rng = np.random.default_rng(4)
    grads = rng.normal(size=100)
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-10

    # Scalar reference, written out independently of the package.
    w, m, v, ref = 0.5, 0.0, 0.0, []
    for g in grads:
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g ** 2
        w = w - lr * m / (math.sqrt(v) + eps)
        ref.append(w)

    state, fw, functional = OptimizerState(lr=lr), {"w": np.array(0.5)}, []
    p = torch.nn.Parameter(torch.tensor([0.5], dtype=torch.float64))
    opt, tw = Adam([p], lr=lr), []
    for g in grads:
        fw, state = adam_step(fw, {"w": np.array(g)}, state)
        functional.append(float(fw["w"]))
        p.grad = torch.tensor([g], dtype=torch.float64)
        opt.step()
        tw.append(p.item())
    err = max(np.max(np.abs(np.subtract(functional, ref))), np.max(np.abs(np.subtract(tw, ref))))
    verdict(4, "ADAM fidelity", err <= 1e-12, f"max deviation {err:.1e} (<= 1e-12) over 100 steps")


def test_c05_ensemble_average():
    rng = np.random.default_rng(5)
    worst, not_invariant = 0.0, 0
    for _ in range(1000):
        x = rng.normal(size=(10, 10)) * 10 ** rng.uniform(-3, 3)
        oracle = np.array([sum(x[r, c] for r in range(10)) / 10 for c in range(10)])
        got = ensemble_average(x)
        worst = max(worst, float(np.max(np.abs(got - oracle))))
        not_invariant += not np.array_equal(got, ensemble_average(x[rng.permutation(10)]))
    verdict(5, "ensemble average", worst <= 1e-9 and not_invariant == 0,
            f"max deviation from column-mean oracle {worst:.1e} (<= 1e-9); "
            f"{not_invariant} of 1000 row permutations changed the result")


def test_c06_split_protocol():
    from egogesture.dataio import split
    bad = []
    for seed in range(10):
        files = {c: [f"{c}/{i:05d}.jpg" for i in range(row[3])]
                 for c, row in PUBLISHED_SPLITS.items()}
        parts = split(files, seed=seed)
        for c, (te, va, tr, _) in PUBLISHED_SPLITS.items():
            got = tuple(len(parts[c][k]) for k in ("test", "val", "train"))
            if got != (te, va, tr):
                bad.append((seed, c, got))
    verdict(6, "split protocol", not bad, f"8 classes x 10 seeds, {len(bad)} mismatching triplets")


def _crop_scale_errors(data, results, side=128):
    errs = []
    for s, r in zip(data, results):
        if r is None or r.code != s.code:
            continue
        gt = s.fingertips.to_normalized(s.bbox)
        pr = r.fingertips.to_normalized(s.bbox)
        for f in s.code.visible():
            dx, dy = (pr[f][0] - gt[f][0]) * side, (pr[f][1] - gt[f][1]) * side
            errs.append(math.hypot(dx, dy))
    return np.array(errs)


def _run_overfit(overfit):
    data, net = overfit["data"], overfit["net"]
    res = detect_batch([(s.name, s.image) for s in data], GroundTruthDetector.from_samples(data), net)
    return data, res


def test_c07_overfit_sanity(overfit):
    data, res = _run_overfit(overfit)
    hist = overfit["history"]
    acc = np.mean([r is not None and r.code == s.code for s, r in zip(data, res)])
    err = _crop_scale_errors(data, res)
    steps = len(hist) * math.ceil(OVERFIT_SAMPLES / 32)
    drop = hist[-1]["train_L"] / hist[0]["train_L"]
    ok = acc == 1.0 and err.mean() < 2.0 and steps <= 500 and overfit["seconds"] < 600 and drop < 0.1
    verdict(7, "overfit sanity", ok,
            f"code accuracy {100 * acc:.1f}% (100%), mean error {err.mean():.2f} px at 128x128 crop scale "
            f"(< 2 px), {steps} steps (<= 500), {overfit['seconds']:.0f} s (< 600 s), "
            f"final/initial L = {drop:.1e} (< 0.1)")


def test_c08_end_to_end_geometry(overfit):
    data, res = _run_overfit(overfit)
    errs = []
    for s, r in zip(data, res):
        for f in s.code.visible():
            if r.fingertips[f] is not None:
                errs.append(math.hypot(r.fingertips[f][0] - s.fingertips[f][0], r.fingertips[f][1] - s.fingertips[f][1]))
    errs = np.array(errs)
    rng = np.random.default_rng(8)
    worst_rt = 0.0
    for s in data:
        c = rng.uniform(-0.2, 1.2, 10)
        worst_rt = max(worst_rt, float(np.max(np.abs(coords_to_normalized(coords_to_image(c, s.bbox), s.bbox) - c))))
    ok = len(errs) > 0 and errs.mean() <= 2.0 and worst_rt <= 1e-9
    verdict(8, "end-to-end geometry", ok,
            f"mean image-pixel fingertip error {errs.mean():.2f} px (<= 2 px; max {errs.max():.2f} px over "
            f"{len(errs)} fingertips); coordinate round trip {worst_rt:.1e} (<= 1e-9)")


def test_c09_ablation_variant_one():
    cfg = NetworkConfig.shrunken(input_size=32, divisor=8)
    proposed = build(cfg, seed=9)
    gap, over = build_variant(AblationVariant.AVERAGING_LAYER, cfg, weights=proposed)
    x = np.random.default_rng(9).random((16, 32, 32, 3), dtype=np.float32)
    a = final_coordinates(predict(proposed, x)[1], "mean")
    b = final_coordinates(predict(gap, x)[1], over["postprocess"])
    diff = float(np.max(np.abs(a - b)))
    extra = parameter_count(gap) - parameter_count(proposed)
    verdict(9, "ablation variant (1) equivalence", diff <= 1e-6 and extra == 0,
            f"max coordinate difference {diff:.1e} (<= 1e-6); averaging layer adds {extra} parameters")


def test_c10_parameter_count():
    n = parameter_count(build(NetworkConfig()))
    rel = abs(n - 24_163_654) / 24_163_654
    verdict(10, "parameter count", rel <= 0.01, f"{n:,} vs 24,163,654 (relative difference {rel:.2%}, <= 1%)")


@pytest.mark.skipif(not os.environ.get(CORPUS_ENV), reason=f"set {CORPUS_ENV} to a prepared corpus root")
def test_c11_corpus_results():
    from pathlib import Path
    from egogesture.dataio import load_dataset, read_splits, split_members
    from egogesture.evaluation import evaluate
    from egogesture.model import load_checkpoint
    root = Path(os.environ[CORPUS_ENV])
    weights = os.environ.get("EGOGESTURE_SCUT_WEIGHTS", str(root / "weights.npz"))
    ds = load_dataset(root)
    test = list(ds.subset(split_members(read_splits(root / "splits.json"), "test")))
    rep, _ = evaluate(load_checkpoint(weights), test)
    acc = rep["classification"]["mean"]["accuracy"]
    px = rep["pixel_error"]["overall_mean"]
    verdict(11, "corpus results (GT boxes)", acc >= 0.99 and px is not None and px <= 6.0,
            f"mean class accuracy {100 * acc:.2f}% (>= 99%), mean pixel error {px:.2f} px (<= 6 px)")


def test_c11_skip_notice():
    if not os.environ.get(CORPUS_ENV):
        ACCEPTANCE[11] = f"[SKIP] criterion 11: corpus results: {CORPUS_ENV} not set (corpus absent)"
        print(ACCEPTANCE[11])
