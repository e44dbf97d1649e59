"""Acceptance criteria 1-10. Each test prints one ``criterion N: PASS|FAIL`` line.

Criteria 6-9 share one set of digit-classification runs (two pooling modes,
each trained twice), which takes roughly 20 minutes on one core. Deselect
them with ``-m "not slow"``.
"""

import itertools
import time

import numpy as np
import pytest

from gradcheck import LAYER_CHECKS, TOL

from adapool.analysis import distance_to_mean_pooling, layer_contiguity
from adapool.checkpoint import save_checkpoint
from adapool.datasets import gen_orbit_dataset, shifted_digits
from adapool.groups import (FiniteGroup, apply, make_cyclic_group, orbit_signature,
                            partial_group_feature)
from adapool.layers import adaptive_pool_forward, mean_pool_as_matrix, mean_pool_forward
from adapool.network import preset
from adapool.tensor import inner_product
from adapool.trainer import (TrainingConfig, network_from_checkpoint,
                             predict_logits, swap_pooling, train, write_metrics_csv)

MODES = ("mean", "max", "adaptive-random", "adaptive-mean-init")

# Shared budget for the mean-pooling baseline and random-init adaptive pooling.
DIGITS_CONFIG = dict(learning_rate=0.1, lr_decay=0.1, decay_epoch=50, batch_size=16,
                     epochs=80, dropout=0.5, seed=0)
DIGITS_TRAIN, DIGITS_TEST = 5000, 1000
DIGITS_MAX_SHIFT = 2  # roughly centered digits, as in cropped-digit photos
LAYER1 = 2  # index of the first pooling layer in the svhn-small preset


def test_criterion_1_gradient_oracles(report):
    start = time.perf_counter()
    worst = {name: max(check(seed) for seed in range(20)) for name, check in LAYER_CHECKS.items()}
    elapsed = time.perf_counter() - start
    name = max(worst, key=worst.get)
    ok = worst[name] < TOL and elapsed < 60
    assert report(1, ok, f"{len(worst)} layer checks x 20 seeds, worst {name} "
                         f"rel err {worst[name]:.2e} (< {TOL:g}), {elapsed:.1f}s (< 60s)")


def test_criterion_2_mean_pool_equivalence(report):
    rng = np.random.default_rng(0)
    worst, cases = 0.0, 0
    for h, w in itertools.product(range(4, 17), repeat=2):
        for p in (1, 2, 4):
            if h % p or w % p:
                continue
            u = rng.uniform(-1, 1, (3, h, w))
            a = adaptive_pool_forward(mean_pool_as_matrix((h, w), p), u.reshape(3, -1))
            b = mean_pool_forward(u, p).reshape(3, -1)
            worst = max(worst, float(np.max(np.abs(a - b))))
            cases += 1
    assert report(2, worst <= 1e-12, f"{cases} (map, p) cases, max |diff| {worst:.1e} (<= 1e-12)")


def _groups():
    out = [make_cyclic_group(n) for n in (1, 2, 3, 4, 5, 6, 7, 8, 12, 16, 32, 64)]
    out += [make_cyclic_group(s) for s in ((2, 2), (2, 3), (3, 4), (4, 4), (8, 8))]
    out += [FiniteGroup(list(itertools.permutations(range(n)))) for n in (3, 4)]
    return out


def _group_suite(G, rng):
    d = G.degree
    x, y, t, w = rng.uniform(-1, 1, (4, d))
    errs = dict(eq1=0.0, unitary=0.0, signature=0.0, full=0.0, sub=0.0)
    sig = orbit_signature(x, t, G)
    errs["signature"] = sig.max_deviation(orbit_signature(x, t, G, act_on="template"))
    for g in range(G.order):
        gx = apply(G, g, x)
        errs["eq1"] = max(errs["eq1"], abs(inner_product(gx, t) - inner_product(x, apply(G, G.inverse[g], t))))
        errs["unitary"] = max(errs["unitary"], abs(inner_product(gx, apply(G, g, y)) - inner_product(x, y)))
        errs["signature"] = max(errs["signature"], orbit_signature(gx, t, G).max_deviation(sig))
    uniform = np.full(G.order, 1.0 / G.order)
    f0 = partial_group_feature(x, w, G, uniform)
    for g in range(G.order):
        errs["full"] = max(errs["full"], abs(partial_group_feature(apply(G, g, x), w, G, uniform) - f0))
    # G0 = union of right cosets H g for the cyclic subgroup H generated by each element
    for h in range(G.order):
        H = G.generated_subgroup([h]).members
        reps = rng.choice(G.order, size=min(3, G.order), replace=False)
        G0 = G.subset(sorted({G.compose[k, r] for r in reps for k in H}))
        assert all(G0.is_closed_under(k) for k in H)
        alpha = np.full(len(G0), 1.0 / len(G0))
        f = partial_group_feature(x, w, G0, alpha)
        for k in H:
            errs["sub"] = max(errs["sub"], abs(partial_group_feature(apply(G, k, x), w, G0, alpha) - f))
    return errs


def test_criterion_3_group_suite(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    groups = _groups()
    worst = dict(eq1=0.0, unitary=0.0, signature=0.0, full=0.0, sub=0.0)
    for G in groups:
        for k, v in _group_suite(G, rng).items():
            worst[k] = max(worst[k], v)
    elapsed = time.perf_counter() - start
    ok = (worst["eq1"] <= 1e-12 and worst["unitary"] <= 1e-12 and worst["signature"] <= 1e-12
          and worst["full"] <= 1e-10 and worst["sub"] == 0.0 and elapsed < 60
          and max(G.order for G in groups) <= 64)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(3, ok, f"{len(groups)} groups of order <= 64: {detail}; {elapsed:.1f}s (< 60s)")


def test_criterion_4_l1_invariant(report):
    rng = np.random.default_rng(0)
    G = make_cyclic_group((8, 8))
    patterns = rng.random((4, 8, 8)) * (rng.random((4, 8, 8)) < 0.3)
    data = gen_orbit_dataset(patterns, G, 25, seed=0)
    cfg = TrainingConfig(learning_rate=0.1, epochs=50, batch_size=10, pooling="adaptive-random",
                         decay_epoch=None, seed=0)
    dev = []

    def check(epoch, net):
        dev.append(max(float(np.max(np.abs(np.abs(pm.weights).sum(axis=0) - 1.0)))
                       for pm in net.pooling_matrices().values()))

    train(preset("toy", n_classes=4), cfg, data, on_epoch=check)
    ok = len(dev) == 51 and max(dev) <= 1e-9
    assert report(4, ok, f"{len(dev)} epoch checks, max | ||col||_1 - 1 | = {max(dev):.1e} (<= 1e-9)")


def test_criterion_5_warm_start_identity(report):
    tr, te = shifted_digits(500, 200, seed=1)
    cfg = TrainingConfig(learning_rate=0.05, epochs=2, batch_size=32, pooling="mean", seed=0)
    result = train(preset("svhn-small"), cfg, tr)
    swapped = network_from_checkpoint(swap_pooling(result.checkpoint, "adaptive-mean-init"))
    X = te.images[:, None]
    diff = float(np.max(np.abs(predict_logits(result.network, X) - predict_logits(swapped, X))))
    assert report(5, diff <= 1e-12, f"max per-logit change at swap {diff:.1e} (<= 1e-12)")


@pytest.fixture(scope="module")
def digit_runs(tmp_path_factory):
    """Mean-pooling and random-init adaptive runs, each repeated once."""
    tr, te = shifted_digits(DIGITS_TRAIN, DIGITS_TEST, seed=0, max_shift=DIGITS_MAX_SHIFT)
    spec = preset("svhn-small")
    out = {}
    for mode in ("mean", "adaptive-random"):
        for rep in (0, 1):
            cfg = TrainingConfig(pooling=mode, **DIGITS_CONFIG)
            init_dist = []

            def first(epoch, net):
                if epoch == 0 and net.pooling_matrices():
                    init_dist.append(float(distance_to_mean_pooling(net.pooling_matrices()[LAYER1]).mean()))

            start = time.perf_counter()
            result = train(spec, cfg, tr, te, on_epoch=first)
            elapsed = time.perf_counter() - start
            d = tmp_path_factory.mktemp(f"{mode}-{rep}")
            save_checkpoint(result.checkpoint, d / "checkpoint.adpl")
            write_metrics_csv(result.metrics, d / "metrics.csv")
            out[mode, rep] = dict(result=result, dir=d, seconds=elapsed, init_dist=init_dist)
    return out


def _final_test_accuracy(run):
    return [m for m in run["result"].metrics if m.split == "test"][-1].accuracy


@pytest.mark.slow
def test_criterion_6_digit_accuracy_gap(report, digit_runs):
    mean, ada = digit_runs["mean", 0], digit_runs["adaptive-random", 0]
    acc_mean, acc_ada = _final_test_accuracy(mean), _final_test_accuracy(ada)
    minutes = (mean["seconds"] + ada["seconds"]) / 60
    gap = 100 * (acc_mean - acc_ada)
    ok = gap <= 5.0 and DIGITS_CONFIG["epochs"] >= 50 and minutes < 30
    assert report(6, ok, f"test acc mean {100 * acc_mean:.1f}% vs adaptive-random {100 * acc_ada:.1f}%, "
                         f"gap {gap:.1f} pts (<= 5), {DIGITS_CONFIG['epochs']} epochs, "
                         f"{minutes:.1f} min (< 30)")


@pytest.mark.slow
def test_criterion_7_contiguity(report, digit_runs):
    A = digit_runs["adaptive-random", 0]["result"].network.pooling_matrices()[LAYER1]
    lc = layer_contiguity(A, tau_a=0.1, permutations=200, seed=0)
    ok = lc.mean_score - lc.baseline_mean >= 2 * lc.baseline_std
    assert report(7, ok, f"mean contiguity {lc.mean_score:.3f} vs permutation baseline "
                         f"{lc.baseline_mean:.3f} +- {lc.baseline_std:.4f} (z = {lc.z:.1f} >= 2)")


@pytest.mark.slow
def test_criterion_8_toward_mean_pooling(report, digit_runs):
    run = digit_runs["adaptive-random", 0]
    before = run["init_dist"][0]
    after = float(distance_to_mean_pooling(run["result"].network.pooling_matrices()[LAYER1]).mean())
    assert report(8, after < before, f"layer-1 mean distance to mean pooling {before:.4f} -> {after:.4f}")


@pytest.mark.slow
def test_criterion_9_determinism(report, digit_runs):
    same = []
    for mode in ("mean", "adaptive-random"):
        a, b = digit_runs[mode, 0]["dir"], digit_runs[mode, 1]["dir"]
        for name in ("checkpoint.adpl", "metrics.csv"):
            same.append((a / name).read_bytes() == (b / name).read_bytes())
    assert report(9, all(same), f"{sum(same)}/{len(same)} checkpoint and metrics files byte-identical")


def test_criterion_10_toy_overfit(report):
    rng = np.random.default_rng(0)
    X, y = rng.random((8, 8, 8)), np.arange(8) % 4
    reached = {}
    for mode in MODES:
        cfg = TrainingConfig(learning_rate=0.1, epochs=500, batch_size=8, pooling=mode,
                             decay_epoch=None, seed=0)
        metrics = train(preset("toy", n_classes=4), cfg, (X, y)).metrics
        reached[mode] = next((m.epoch for m in metrics if m.accuracy == 1.0), None)
    ok = all(e is not None for e in reached.values())
    detail = ", ".join(f"{m} {'epoch ' + str(e) if e is not None else 'never'}" for m, e in reached.items())
    assert report(10, ok, f"100% train accuracy reached: {detail}")
