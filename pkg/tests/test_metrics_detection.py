import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citruslens.errors import EmptyGrid, NoGroundTruth
from citruslens.geometry import BBox, Detection
from citruslens.metrics import (
    ImageEval,
    average_precision,
    collect_flags,
    confidence_curves,
    map_at,
    match_detections,
    pr_curve,
    precision_recall_at,
)
from fixtures import brute_ap, brute_match, random_detection_instance

G = BBox(0, 0, 10, 10)


def det(box, conf, cid=0):
    return Detection(box, conf, cid)


# ---- matching


def test_match_exact_hit():
    d = det(G, 0.9)
    res = match_detections([d], [(G, 0)], 0.5)
    assert res.flags == [(d, True)] and res.unmatched_gt == 0


def test_match_duplicate_is_fp():
    a, b = det(G, 0.8), det(BBox(0, 0, 10, 9), 0.9)
    res = match_detections([a, b], [(G, 0)], 0.5)
    assert res.flags == [(b, True), (a, False)]


def test_match_threshold_is_inclusive():
    d = det(BBox(0, 0, 10, 5), 0.9)  # IoU exactly 0.5
    assert match_detections([d], [(G, 0)], 0.5).flags[0][1] is True


def test_match_ignores_other_classes():
    res = match_detections([det(G, 0.9, 1)], [(G, 0)], 0.5)
    assert res.flags[0][1] is False and res.unmatched_gt == 1


def _exhaustive_greedy(dets, gts, t):
    """Trace the greedy rule by scanning every GT for every detection."""
    return brute_match(dets, gts, t)


@given(st.integers(0, 10_000))
@settings(max_examples=80, deadline=None)
def test_match_agrees_with_oracle(seed):
    dets, gts, _ = random_detection_instance(np.random.default_rng(seed))
    res = match_detections(dets, gts, 0.5)
    got = [(d.confidence, hit) for d, hit in res.flags]
    assert got == _exhaustive_greedy(dets, gts, 0.5)
    n_tp = sum(h for _, h in got)
    assert n_tp <= min(len(dets), len(gts))
    assert res.unmatched_gt == len(gts) - n_tp


# ---- AP


def test_ap_examples():
    assert average_precision([(0.9, True)], 1) == 1.0
    seq = [(0.9, False), (0.8, True)]
    assert average_precision(seq, 1, "all-points") == pytest.approx(0.5)
    assert average_precision(seq, 1, "101-point") == pytest.approx(0.5)
    seq = [(0.9, True), (0.8, False), (0.7, True)]
    assert average_precision(seq, 2, "all-points") == pytest.approx(5 / 6)
    with pytest.raises(NoGroundTruth):
        average_precision(seq, 0)


def test_ap_accepts_detections_as_keys():
    assert average_precision([(det(G, 0.4), True)], 2, "all-points") == pytest.approx(0.5)


scored_lists = st.lists(st.tuples(st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]), st.booleans()), max_size=40)


@given(scored_lists, st.integers(0, 10))
def test_ap_matches_brute_force(scored, extra):
    total = sum(h for _, h in scored) + extra
    if total == 0:
        return
    for mode in ("all-points", "101-point"):
        ap = average_precision(scored, total, mode)
        assert 0.0 <= ap <= 1.0
        assert ap == pytest.approx(brute_ap(scored, total, mode), abs=1e-12)


@given(scored_lists, st.integers(1, 5))
def test_trailing_fp_never_increases_ap(scored, extra):
    total = sum(h for _, h in scored) + extra
    worse = scored + [(0.01, False)]
    for mode in ("all-points", "101-point"):
        assert average_precision(worse, total, mode) <= average_precision(scored, total, mode) + 1e-15


def test_all_points_close_to_101_on_large_instances():
    rng = np.random.default_rng(7)
    for _ in range(10):
        n = 300
        scored = [(float(rng.random()), bool(rng.random() < 0.6)) for _ in range(n)]
        total = sum(h for _, h in scored) + 5
        a = average_precision(scored, total, "all-points")
        b = average_precision(scored, total, "101-point")
        assert abs(a - b) < 0.01


def test_pr_curve_shape():
    seq = [(0.9, True), (0.8, False), (0.7, True)]
    curve = pr_curve(seq, 2, 0.5, 0)
    assert curve.points == [(0.5, 1.0), (0.5, 0.5), (1.0, 2 / 3)]
    recalls = [r for r, _ in curve.points]
    assert recalls == sorted(recalls)


# ---- mAP


def _images(seed, n_images=5, n_classes=None):
    rng = np.random.default_rng(seed)
    n_classes = n_classes or int(rng.integers(1, 4))
    return [ImageEval(*random_detection_instance(rng, n_classes)[:2]) for _ in range(n_images)]


def _brute_map(images, t):
    classes = sorted({c for im in images for _, c in im.ground_truth})
    aps = []
    for c in classes:
        scored, total = [], 0
        for im in images:
            gts = [g for g in im.ground_truth if g[1] == c]
            dets = [d for d in im.detections if d.class_id == c]
            total += len(gts)
            scored += brute_match(dets, gts, t)
        aps.append(brute_ap(scored, total))
    return sum(aps) / len(aps)


def test_map_perfect_detector():
    images = [ImageEval([det(G, 0.9)], [(G, 0)]), ImageEval([det(BBox(5, 5, 30, 40), 0.8, 1)], [(BBox(5, 5, 30, 40), 1)])]
    res = map_at(images)
    assert all(v == 1.0 for v in res.per_threshold.values()) and res.aggregate == 1.0


@pytest.mark.parametrize("seed", range(8))
def test_map_matches_brute_force(seed):
    images = _images(seed, n_classes=1)
    if not any(im.ground_truth for im in images):
        return
    thresholds = (0.5, 0.75)
    res = map_at(images, thresholds)
    for t in thresholds:
        assert res.per_threshold[t] == pytest.approx(_brute_map(images, t), abs=1e-12)
    single = map_at(images, [0.5])
    assert single.aggregate == single.per_threshold[0.5]


def test_map_excludes_classes_without_gt():
    images = [ImageEval([det(G, 0.9), det(G, 0.5, 2)], [(G, 0)])]
    res = map_at(images, [0.5])
    assert res.aggregate == 1.0 and res.excluded_classes == (2,)
    with pytest.raises(NoGroundTruth):
        map_at([ImageEval([det(G, 0.9)], [])], [0.5])


def test_area_buckets():
    small = BBox(0, 0, 20, 20)
    big = BBox(100, 100, 300, 300)
    images = [ImageEval([det(small, 0.9), det(big, 0.3)], [(small, 0), (big, 0)])]
    med = map_at(images, [0.5], area="medium")
    large = map_at(images, [0.5], area="large")
    assert med.aggregate == 1.0 and large.aggregate == 1.0
    # an unmatched detection in the other bucket does not count against this one
    images = [ImageEval([det(small, 0.9), det(BBox(400, 400, 600, 600), 0.95)], [(small, 0), (big, 0)])]
    assert map_at(images, [0.5], area="medium").aggregate == 1.0
    assert map_at(images, [0.5], area="large").aggregate == 0.0


# ---- confidence curves


def _sweep_oracle(scored, total):
    best_t, best_f = None, -1.0
    for t in sorted({c for c, _ in scored}):
        sel = [h for c, h in scored if c >= t]
        f = 2 * sum(sel) / (len(sel) + total)
        if f > best_f:
            best_t, best_f = t, f
    return best_t, best_f


def test_all_tp_peaks_at_lowest_threshold():
    scored = [(0.3, True), (0.6, True), (0.9, True)]
    curve = confidence_curves(scored, 3, "f1")
    assert curve.optimal_threshold == 0.0 and curve.optimal_value == 1.0


def test_empty_selection_precision_is_one_and_flagged():
    curve = confidence_curves([(0.5, False)], 1, "precision", grid=[0.0, 0.6])
    assert curve.points == [(0.0, 0.0), (0.6, 1.0)]
    assert curve.empty == [False, True]


def test_grid_errors():
    with pytest.raises(EmptyGrid):
        confidence_curves([(0.5, True)], 1, grid=[])
    with pytest.raises(ValueError):
        confidence_curves([(0.5, True)], 1, grid=[0.5, 0.4])


@given(st.lists(st.tuples(st.integers(1, 1000).map(lambda i: i / 1000), st.booleans()), min_size=1, max_size=60), st.integers(0, 5))
@settings(max_examples=80, deadline=None)
def test_f1_optimum_matches_sweep(scored, extra):
    total = sum(h for _, h in scored) + extra
    if total == 0:
        return
    curve = confidence_curves(scored, total, "f1", grid=sorted({c for c, _ in scored}))
    t, f = _sweep_oracle(scored, total)
    assert curve.optimal_threshold == t
    assert curve.optimal_value == pytest.approx(f, abs=1e-15)
    p, r, f1 = precision_recall_at(scored, total, t)
    assert f1 == pytest.approx(f)


def test_collect_flags_pools_images():
    images = [ImageEval([det(G, 0.9)], [(G, 0)]), ImageEval([det(G, 0.4)], [(BBox(50, 50, 60, 60), 0)])]
    flags, total = collect_flags(images, 0.5, 0)
    assert flags == [(0.9, True), (0.4, False)] and total == 2
