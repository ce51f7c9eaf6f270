import random

import pytest

from iotrust.anomaly import (InsufficientTrafficError, kneedle, scan,
                             select_window_size, trust_score,
                             window_misprediction_rate)
from iotrust.predictor import TrainConfig, make_training_set, train


def cycle(symbols, length):
    return [symbols[i % len(symbols)] for i in range(length)]


def ngram_on(stream):
    return train(make_training_set([stream], window=10), TrainConfig(kind="ngram"))


def zeros_model():
    """Predicts 0 whatever the context: trained on an all-zero stream."""
    return ngram_on([0] * 60)


def test_scan_perfect_model():
    stream = cycle([0, 1, 2, 3, 4], 400)
    verdicts = scan(ngram_on(stream), stream, 100, 0.5)
    assert len(verdicts) == 301
    assert all(v.misprediction_rate == 0.0 and not v.anomalous for v in verdicts)


def test_scan_hostile_stream():
    verdicts = scan(zeros_model(), [7] * 150, 100, 0.5)
    assert all(v.misprediction_rate == 1.0 and v.anomalous for v in verdicts)


def test_scan_short_stream_empty():
    assert scan(zeros_model(), [0] * 99, 100, 0.5) == []


def test_scan_matches_bruteforce_recount():
    rng = random.Random(5)
    base = cycle([0, 1, 2, 3, 4], 500)
    stream = [s if rng.random() > 0.15 else rng.randrange(5) for s in base]
    model = ngram_on(base)
    window_size = 60
    verdicts = scan(model, stream, window_size, 0.5)
    for w in (0, 1, 17, len(verdicts) - 1):
        lo, hi = w, w + window_size
        preds = [(j, model.predict(stream[j - 10:j]))
                 for j in range(max(lo, 10), hi)]
        misses = sum(1 for j, p in preds if p != stream[j])
        assert verdicts[w].misprediction_rate == pytest.approx(misses / len(preds))


def test_scan_threshold_is_strict():
    # one 30-wide window; positions 10..29 are predictable, so the count of
    # ones placed there sets m_r exactly; at the threshold is not anomalous
    stream = [0] * 10 + [1] * 10 + [0] * 10
    verdicts = scan(zeros_model(), stream, 30, 0.5)
    assert verdicts[0].misprediction_rate == 0.5
    assert not verdicts[0].anomalous
    hot = [0] * 10 + [1] * 11 + [0] * 9
    verdicts = scan(zeros_model(), hot, 30, 0.5)
    assert verdicts[0].misprediction_rate == 0.55
    assert verdicts[0].anomalous


def test_coinflip_error_rate_recovered():
    model = zeros_model()
    for p in (0.1, 0.9):
        rng = random.Random(int(p * 10))
        stream = [0 if rng.random() > p else rng.randrange(1, 6)
                  for _ in range(12_000)]
        rate = window_misprediction_rate(model, stream)
        assert abs(rate - p) < 0.05


def corrupted(n_bad):
    # one window exactly: length 20 scanned at window_size 20, ten predictable
    # positions, n_bad of them wrong for the all-zeros model
    seq = [0] * 20
    for i in range(n_bad):
        seq[19 - 2 * i] = 1
    return seq


def test_trust_score_formula():
    score = trust_score(zeros_model(), [corrupted(2), corrupted(4)],
                        k=2, window_size=20, anomaly_threshold=0.5)
    assert score.value == pytest.approx(0.7)
    assert score.k_sequences == 2


def test_trust_score_uses_most_recent():
    seqs = [corrupted(0), corrupted(2), corrupted(4)]
    assert trust_score(zeros_model(), seqs, k=2, window_size=20,
                       anomaly_threshold=0.5).value == pytest.approx(0.7)
    assert trust_score(zeros_model(), seqs, k=3, window_size=20,
                       anomaly_threshold=0.5).value == pytest.approx(0.8)


def test_trust_score_bounds():
    perfect = trust_score(zeros_model(), [[0] * 40], k=5, window_size=20,
                          anomaly_threshold=0.5)
    assert perfect.value == 1.0
    hostile = trust_score(zeros_model(), [[3] * 40], k=5, window_size=20,
                          anomaly_threshold=0.5)
    assert hostile.value == 0.0


def test_trust_score_needs_scannable_traffic():
    with pytest.raises(InsufficientTrafficError):
        trust_score(zeros_model(), [[0] * 12], k=2, window_size=20, anomaly_threshold=0.5)


def test_kneedle_sqrt_curve():
    u = [i / 100 for i in range(101)]
    y = [v ** 0.5 for v in u]
    knee = kneedle(u, y, direction="increasing", curvature="concave")
    assert knee.x == pytest.approx(0.25, abs=0.01)
    assert not knee.degenerate


def test_kneedle_orientations():
    u = [i / 100 for i in range(101)]
    cases = [
        ([v ** 0.5 for v in u], "increasing", "concave", 0.25),
        ([1 - v ** 0.5 for v in u], "decreasing", "convex", 0.25),
        ([(1 - v) ** 0.5 for v in u], "decreasing", "concave", 0.75),
        ([1 - (1 - v) ** 0.5 for v in u], "increasing", "convex", 0.75),
    ]
    for y, direction, curvature, expected in cases:
        knee = kneedle(u, y, direction=direction, curvature=curvature)
        assert knee.x == pytest.approx(expected, abs=0.01), (direction, curvature)


def test_kneedle_straight_line_degenerate():
    u = [i / 4 for i in range(5)]
    knee = kneedle(u, [1 - v for v in u], direction="decreasing",
                   curvature="convex")
    assert knee.degenerate
    assert knee.x == u[0]


def test_kneedle_affine_invariance():
    u = [i / 50 for i in range(51)]
    y = [v ** 0.5 for v in u]
    base = kneedle(u, y, direction="increasing", curvature="concave")
    moved = kneedle([10 + 3 * v for v in u], [5 + 2 * w for w in y],
                    direction="increasing", curvature="concave")
    assert moved.index == base.index


def test_kneedle_window_amplitude_example():
    knee = kneedle([25, 50, 100, 200, 400], [0.8, 0.3, 0.12, 0.1, 0.09],
                   direction="decreasing", curvature="convex")
    assert knee.x == 100


def test_kneedle_input_validation():
    with pytest.raises(ValueError):
        kneedle([1, 2], [1, 2])
    with pytest.raises(ValueError):
        kneedle([1, 1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        kneedle([1, 2, 3], [1, 2, 3], direction="sideways")


def test_select_window_size_finds_burst_knee():
    base = cycle([0, 1, 2, 3, 4], 2000)
    model = ngram_on(base)
    calibration = base[:1000] + [6] * 25 + base[1025:]
    picked = select_window_size(model, calibration, [25, 50, 100, 200, 400])
    assert picked.size == 100
    assert not picked.degenerate
    sizes = [s for s, _ in picked.amplitudes]
    amps = dict(picked.amplitudes)
    assert sizes == [25, 50, 100, 200, 400]
    assert amps[25] == 1.0  # a 25-window sits fully inside the burst
    assert amps[400] < amps[100] < amps[25]


def test_select_window_size_flat_curve_degenerate():
    stream = cycle([0, 1, 2, 3, 4], 1500)
    picked = select_window_size(ngram_on(stream), stream, [50, 100, 200])
    assert picked.degenerate
    assert picked.size == 50


def test_select_window_size_validation():
    model = zeros_model()
    with pytest.raises(ValueError):
        select_window_size(model, [0] * 500, [100, 200])
    with pytest.raises(ValueError):
        select_window_size(model, [0] * 500, [100, 100, 200])
