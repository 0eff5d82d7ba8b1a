"""Acceptance criteria, one test per criterion.

Each test records a single PASS / FAIL / NOT RUN line (see ``conftest.py``),
which is repeated in the terminal summary.  Tolerances are pinned here.
Criteria that do not hold are marked ``xfail(strict=True)`` with the measured
numbers in the verdict line, so a change in behaviour is noticed either way.
"""

import time

import numpy as np
import pytest

import stkws.layers as layers_module
from conftest import record
from oracles import (attention_loops, depthwise_loops, kink_aware_difference,
                     mfcc_reference, pointwise_loops, relative_error)
from stkws.attention import PooledAttention, pooled_attention
from stkws.audio import AudioClip, extract_features, mfcc
from stkws.autograd import Tensor, no_grad
from stkws.cli import main
from stkws.estimator import MFCCTransformer, STAttNetClassifier
from stkws.evaluation import roc_for_keyword, vertical_average
from stkws.layers import avg_pool_time, depthwise_conv1d, softmax_cross_entropy
from stkws.models import build, footprint, get_spec
from stkws.synthetic import make_dataset
from stkws.training import LrSchedulerState, schedule_update

FD_TOLERANCE = 1e-4
FD_EPS = 1e-5
ATTENTION_TOLERANCE = 1e-10
NORMALIZATION_TOLERANCE = 1e-12
PERMUTATION_THRESHOLD = 1e-6
MFCC_TOLERANCE = 1e-6
ROC_IDEMPOTENCE_TOLERANCE = 1e-9


# -- 1. footprint -------------------------------------------------------------------

def test_criterion_1_footprint(tmp_path, capsys):
    start = time.perf_counter()
    assert main(["footprint", "ST-AttNet4", "--output-dir", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    elapsed = time.perf_counter() - start
    fp, wide = footprint("ST-AttNet4"), footprint("ST-AttNet4-wide")
    got = {
        "conv": (fp.row("conv").params, fp.row("conv").multipliers),
        "res x4": (fp.row("res x4").params, fp.row("res x4").multipliers),
        "softmax": fp.row("softmax").params,
        "wide softmax": wide.row("softmax").params,
        "avg-att": fp.row("avg-att").params,
        "wide avg-att": wide.row("avg-att").params,
    }
    want = {"conv": (1_920, 188_160), "res x4": (17_280, 1_693_440), "softmax": 540, "wide softmax": 780,
            "avg-att": 2_025, "wide avg-att": 4_225}
    delta_printed = "avg-att params: 2,025 vs 4.3K" in text
    wide_delta = ("avg-att", "params", 4_225, "8.5K") in wide.reference_deltas()
    passed = got == want and delta_printed and wide_delta and elapsed < 1.0
    record(1, passed, f"conv {got['conv']}, res x4 {got['res x4']}, softmax {got['softmax']}/"
                      f"{got['wide softmax']}, avg-att {got['avg-att']}/{got['wide avg-att']} "
                      f"(published 4.3K/8.5K flagged), {elapsed:.3f} s")
    assert passed


# -- 2. oracle equivalence ----------------------------------------------------------

def test_criterion_2_oracles():
    rng = np.random.default_rng(2024)
    instances = 0
    worst_real = 0.0
    for _ in range(40):
        for d in (1, 2, 4):
            T, C = int(rng.integers(1, 12)), int(rng.integers(1, 6))
            # integer-valued data: every summation order is exact, so equality is the right test
            x = rng.integers(-8, 9, (T, C)).astype(np.float64)
            k = rng.integers(-8, 9, (3, C)).astype(np.float64)
            np.testing.assert_array_equal(depthwise_conv1d(x, k, d).data, depthwise_loops(x, k, d))
            xr, kr = rng.standard_normal((T, C)), rng.standard_normal((3, C))
            worst_real = max(worst_real, np.abs(depthwise_conv1d(xr, kr, d).data - depthwise_loops(xr, kr, d)).max())
            instances += 1
        T, ci, co = int(rng.integers(1, 10)), int(rng.integers(1, 7)), int(rng.integers(1, 7))
        x = rng.integers(-8, 9, (T, ci)).astype(np.float64)
        w = rng.integers(-8, 9, (ci, co)).astype(np.float64)
        np.testing.assert_array_equal(x @ w, pointwise_loops(x, w))
        layer = layers_module.PointwiseConv(ci, co)
        layer.weight.data = w
        np.testing.assert_array_equal(layer(x).data, pointwise_loops(x, w))
        instances += 1
    worst_att = 0.0
    for seed in range(5):
        m = PooledAttention(45, 45, 5, np.random.default_rng(seed))
        u = np.random.default_rng(100 + seed).standard_normal((98, 45))
        pooled = avg_pool_time(u).data[None]
        expected = np.concatenate([attention_loops(pooled @ m.head_weight(i).data, u @ m.head_weight(i).data,
                                                   u @ m.head_weight(i).data)[0] for i in range(5)])
        worst_att = max(worst_att, np.abs(pooled_attention(u, m).data - expected).max())
    passed = instances >= 100 and worst_real < 1e-12 and worst_att < ATTENTION_TOLERANCE
    record(2, passed, f"{instances} conv instances exact (real-valued max diff {worst_real:.1e}); "
                      f"pooled attention max diff {worst_att:.1e} < {ATTENTION_TOLERANCE:g}")
    assert passed


# -- 3. gradients -------------------------------------------------------------------

def _relu_recorder(monkeypatch):
    masks = []
    original = layers_module.relu

    def recording_relu(a):
        out = original(a)
        masks.append(out.data > 0)
        return out

    monkeypatch.setattr(layers_module, "relu", recording_relu)
    return masks


def _gradient_check(model, masks):
    x = np.random.default_rng(1).standard_normal((2, 98, 40))
    y = np.array([3, 7])
    model.train()
    model.zero_grad()
    softmax_cross_entropy(model(Tensor(x)), y).backward()

    def loss_and_signature():
        masks.clear()
        with no_grad():
            value = softmax_cross_entropy(model(Tensor(x)), y).item()
        return value, list(masks)

    raw_worst, worst, remeasured, unresolved, total, worst_name = 0.0, 0.0, 0, 0, 0, ""
    for name, p in model.named_parameters():
        raw, corrected, n_re, n_un = kink_aware_difference(loss_and_signature, p.data, FD_EPS)
        raw_worst = max(raw_worst, relative_error(p.grad, raw))
        err = relative_error(p.grad, corrected)
        if err > worst:
            worst, worst_name = err, name
        remeasured += n_re
        unresolved += n_un
        total += p.size
    return raw_worst, worst, worst_name, remeasured, unresolved, total


@pytest.mark.slow
def test_criterion_3_gradients(monkeypatch):
    masks = _relu_recorder(monkeypatch)
    mini = build(get_spec("ST-AttNet4", channels=8, dilated_blocks=2, heads=4), seed=0)
    full = build("ST-AttNet4", seed=0)
    results = {}
    for label, model in (("mini", mini), ("full", full)):
        results[label] = _gradient_check(model, masks)
    passed = all(r[1] < FD_TOLERANCE and r[4] == 0 for r in results.values())
    detail = "; ".join(
        f"{label}: worst rel err {r[1]:.1e} ({r[2]}), {r[3]} of {r[5]} entries straddled a ReLU kink at "
        f"eps={FD_EPS:g} and were re-measured (plain eps={FD_EPS:g} worst {r[0]:.1e})"
        for label, r in results.items())
    record(3, passed, detail)
    assert passed


# -- 4. attention normalization and permutation behaviour ---------------------------

@pytest.mark.xfail(strict=True, reason="pooled attention with a mean-pooled query is permutation-invariant")
def test_criterion_4_attention_normalization():
    rng = np.random.default_rng(4)
    worst_sum = 0.0
    for seed in range(50):
        m = PooledAttention(45, 45, 5, np.random.default_rng(seed))
        u = rng.standard_normal((int(rng.integers(1, 99)), 45)) * rng.uniform(0.1, 20)
        worst_sum = max(worst_sum, np.abs(m.attention_weights(u).sum(axis=-1) - 1).max())
    normalized = worst_sum < NORMALIZATION_TOLERANCE
    pool_delta = 0.0
    for seed in range(20):
        r = np.random.default_rng(500 + seed)
        u = r.standard_normal((98, 45)) * r.uniform(0.1, 100)
        perm = r.permutation(98)
        pool_delta = max(pool_delta, np.abs(avg_pool_time(u[perm]).data - avg_pool_time(u).data).max())
    pool_invariant = pool_delta == 0.0
    largest_change = 0.0
    for seed in range(200):
        r = np.random.default_rng(10_000 + seed)
        m = PooledAttention(45, 45, 5, r)
        u = r.standard_normal((98, 45)) * r.uniform(0.5, 5)
        perm = r.permutation(98)
        largest_change = max(largest_change, np.abs(pooled_attention(u[perm], m).data -
                                                    pooled_attention(u, m).data).max())
    sensitive = largest_change > PERMUTATION_THRESHOLD
    passed = normalized and pool_invariant and sensitive
    record(4, passed,
           f"weights sum to 1 within {worst_sum:.1e}; avg_pool_time permutation change {pool_delta:.1e} "
           f"over 20 trials; no permutation-sensitive pooled_attention instance in 200 trials "
           f"(largest change {largest_change:.1e} <= {PERMUTATION_THRESHOLD:g}): the mean-pooled query and the "
           f"softmax-weighted sum over frames are both order-free")
    assert passed


# -- 5. scheduler -------------------------------------------------------------------

def test_criterion_5_scheduler():
    keep = schedule_update(LrSchedulerState(lr=1e-3, prev_dev_loss=1.0, epochs_at_current_lr=2), 0.90)
    decay = schedule_update(LrSchedulerState(lr=1e-3, prev_dev_loss=1.0, epochs_at_current_lr=2), 0.97)
    floor = schedule_update(LrSchedulerState(lr=1.2e-5, prev_dev_loss=1.0, epochs_at_current_lr=2), 0.97)
    dwell = schedule_update(LrSchedulerState(lr=1e-3, prev_dev_loss=1.0, epochs_at_current_lr=1), 0.97)
    passed = keep == 1e-3 and decay == 0.6 * 1e-3 and floor == 1e-5 and dwell == 1e-3
    record(5, passed, f"5% rule keeps {keep:g}; stall decays to {decay:g}; floor {floor:g}; "
                      f"dwell 1 keeps {dwell:g}")
    assert passed


# -- 6. desk-scale learning ---------------------------------------------------------

DESK_EPOCHS_TWO_CLASS = 30
DESK_EPOCHS_FOUR_CLASS = 15
DESK_SEEDS = (0, 1, 2)


def _two_class_run():
    clips, y, _ = make_dataset({"yes": 100, "no": 100}, seed=0)
    X = MFCCTransformer().transform(clips)
    clf = STAttNetClassifier(epochs=DESK_EPOCHS_TWO_CLASS, num_classes=2, seed=0, record_train_accuracy=True)
    acc = clf.fit(X, y).history_.column("train_accuracy")
    first = next((i + 1 for i, a in enumerate(acc) if a >= 0.95), None)
    return first, max(acc)


def _four_class_runs():
    clips, y, _ = make_dataset({"yes": 200, "no": 200, "up": 200, "down": 200}, seed=100)
    X = MFCCTransformer().transform(clips)
    dev = np.arange(len(y)) % 5 == 4
    scores = {"ST-AttNet4": [], "ST-Net4": []}
    for seed in DESK_SEEDS:
        for variant in scores:
            clf = STAttNetClassifier(variant=variant, epochs=DESK_EPOCHS_FOUR_CLASS, num_classes=4, seed=seed)
            clf.fit(X[~dev], y[~dev], eval_set=(X[dev], y[dev]))
            scores[variant].append(float(np.mean(clf.predict(X[dev]) == y[dev])))
    return scores


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="ST-AttNet4 overfits the 640-clip synthetic subset more than ST-Net4")
def test_criterion_6_desk_scale_learning():
    start = time.perf_counter()
    first, best_train = _two_class_run()
    scores = _four_class_runs()
    elapsed = time.perf_counter() - start
    att, avg = np.median(scores["ST-AttNet4"]), np.median(scores["ST-Net4"])
    two_class_ok = first is not None
    ordering_ok = att >= avg - 0.01
    passed = two_class_ok and ordering_ok and elapsed <= 15 * 60
    record(6, passed,
           f"2-class: 95% train accuracy at epoch {first} (best {best_train:.3f}); 4-class dev accuracy "
           f"median ST-AttNet4 {att:.3f} {scores['ST-AttNet4']} vs ST-Net4 {avg:.3f} {scores['ST-Net4']} "
           f"(needs >= ST-Net4 - 0.01); {elapsed:.0f} s")
    assert passed


# -- 7. full-scale reproduction -----------------------------------------------------

def test_criterion_7_full_scale_documented():
    record(7, None, "full Speech Commands training is outside CI; recipe in README (target >= 95% test accuracy)")
    pytest.skip("full-scale run is documented, not executed")


# -- 8. ROC machinery ---------------------------------------------------------------

def test_criterion_8_roc():
    curve = roc_for_keyword([0.9, 0.8, 0.4, 0.3, 0.7], [True, True, True, False, False])
    i = int(np.argmin(np.abs(curve.thresholds - 0.5)))
    point = (curve.false_alarm[i], curve.false_reject[i])
    example_ok = point == (0.5, 1 / 3)
    rng = np.random.default_rng(8)
    monotone = True
    for _ in range(50):
        n = int(rng.integers(2, 60))
        labels = rng.random(n) < 0.5
        labels[:2] = [True, False]
        c = roc_for_keyword(rng.random(n), labels)
        monotone &= bool(np.all(np.diff(c.false_alarm) >= 0) and np.all(np.diff(c.false_reject) <= 0))
    c = roc_for_keyword(rng.random(200), rng.random(200) < 0.3)
    idem = np.abs(vertical_average([c, c]).false_reject - vertical_average([c]).false_reject).max()
    passed = example_ok and monotone and idem <= ROC_IDEMPOTENCE_TOLERANCE
    record(8, passed, f"(FAR, FRR) at 0.5 = ({point[0]:g}, {point[1]:.4f}); monotone over 50 random sets; "
                      f"duplicate-curve average differs by {idem:.1e}")
    assert passed


# -- 9. MFCC conformance ------------------------------------------------------------

def _signals():
    rng = np.random.default_rng(9)
    t = np.arange(16000) / 16000
    out = []
    for i in range(20):
        kind = i % 4
        if kind == 0:
            x = 0.5 * np.sin(2 * np.pi * rng.uniform(50, 7500) * t)
        elif kind == 1:
            x = 0.3 * rng.standard_normal(16000)
        elif kind == 2:
            f0, f1 = rng.uniform(100, 1000), rng.uniform(2000, 7000)
            x = 0.4 * np.sin(2 * np.pi * (f0 * t + (f1 - f0) * t ** 2 / 2))
        else:
            x = sum(rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * rng.uniform(100, 7000) * t + rng.uniform(0, 6))
                    for _ in range(5))
        out.append(x)
    return out


@pytest.mark.slow
def test_criterion_9_mfcc():
    worst, shapes_ok = 0.0, True
    for x in _signals():
        clip = AudioClip(x)
        worst = max(worst, np.abs(mfcc(clip).values - mfcc_reference(x)).max())
        shapes_ok &= extract_features(clip).shape == (98, 40)
    passed = worst < MFCC_TOLERANCE and shapes_ok
    record(9, passed, f"20 signals, max coefficient diff {worst:.1e} < {MFCC_TOLERANCE:g}; all 98x40")
    assert passed
