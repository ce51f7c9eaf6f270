"""Misprediction scanning, trust scores, and knee-based window selection.

A fingerprint model is slid over a symbol stream in overlapping windows;
each window's misprediction rate m_r is compared against a threshold to
flag anomalies. A device's trust score for a peer is one minus the mean
m_r over the peer's recent interaction sequences. The scan window size is
picked by running the knee-point method over the peak-to-peak amplitude of
m_r at candidate sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

from .features import SymbolSequence
from .predictor import FingerprintModel

DEFAULT_WINDOW_SIZE = 100
DEFAULT_THRESHOLD = 0.5
DEFAULT_K_SEQUENCES = 5


class InsufficientTrafficError(ValueError):
    pass


@dataclass(frozen=True)
class WindowVerdict:
    window_index: int
    misprediction_rate: float
    anomalous: bool


@dataclass(frozen=True)
class TrustScore:
    evaluator: str
    target: str
    value: float
    k_sequences: int


def _symbols_of(stream: Union[SymbolSequence, Sequence[int]]) -> List[int]:
    return list(stream.symbols) if isinstance(stream, SymbolSequence) else list(stream)


def _prediction_flags(model: FingerprintModel, symbols: Sequence[int]) -> List[bool]:
    """flags[i] for i >= model.window: was symbols[i] mispredicted?"""
    contexts = [symbols[i - model.window:i] for i in range(model.window, len(symbols))]
    if not contexts:
        return []
    predicted = model.predict_many(contexts)
    return [p != actual for p, actual in zip(predicted, symbols[model.window:])]


def window_misprediction_rate(model: FingerprintModel, symbols: Sequence[int]) -> float:
    """m_r over one standalone window: positions with a full in-window context."""
    flags = _prediction_flags(model, _symbols_of(symbols))
    if not flags:
        raise InsufficientTrafficError("window holds no predictable position")
    return sum(flags) / len(flags)


def scan(model: FingerprintModel, stream: Union[SymbolSequence, Sequence[int]],
         window_size: int = DEFAULT_WINDOW_SIZE,
         anomaly_threshold: float = DEFAULT_THRESHOLD) -> List[WindowVerdict]:
    """Slide a window of ``window_size`` symbols by one over the stream.

    Prediction contexts cross window boundaries: inside a window, every
    position with at least ``model.window`` preceding symbols in the full
    stream is predicted. m_r is mispredictions over predictions for the
    window; a window is anomalous when m_r exceeds the threshold. A stream
    shorter than the window yields no verdicts.
    """
    if window_size < model.window + 1:
        raise ValueError("window_size must exceed the model context window")
    if not 0.0 < anomaly_threshold < 1.0:
        raise ValueError("anomaly_threshold must lie strictly between 0 and 1")
    symbols = _symbols_of(stream)
    if len(symbols) < window_size:
        return []
    flags = _prediction_flags(model, symbols)

    # prefix sums over positions, offset by the model window
    wrong_prefix = [0]
    for flag in flags:
        wrong_prefix.append(wrong_prefix[-1] + flag)

    def wrong_between(lo: int, hi: int) -> int:
        lo = max(lo, model.window)
        if hi <= lo:
            return 0
        return wrong_prefix[hi - model.window] - wrong_prefix[lo - model.window]

    verdicts = []
    for start in range(0, len(symbols) - window_size + 1):
        end = start + window_size
        predictable = end - max(start, model.window)
        if predictable <= 0:
            continue
        rate = wrong_between(start, end) / predictable
        verdicts.append(WindowVerdict(start, rate, rate > anomaly_threshold))
    return verdicts


def trust_score(model: FingerprintModel,
                recent_sequences: Sequence[Union[SymbolSequence, Sequence[int]]],
                k: int = DEFAULT_K_SEQUENCES,
                window_size: int = DEFAULT_WINDOW_SIZE,
                anomaly_threshold: float = DEFAULT_THRESHOLD,
                evaluator: str = "", target: str = "") -> TrustScore:
    """tau = 1 - mean per-sequence mean window m_r over the k most recent
    sequences. Sequences too short for a single window are skipped; if all
    are, raises :class:`InsufficientTrafficError`.
    """
    if k < 1:
        raise ValueError("k must be positive")
    chosen = list(recent_sequences)[-k:]
    if not chosen:
        raise InsufficientTrafficError("insufficient traffic: no recent sequences")
    last = chosen[-1]
    if isinstance(last, SymbolSequence):
        evaluator = evaluator or last.dst
        target = target or last.src
    means = []
    for seq in chosen:
        verdicts = scan(model, seq, window_size, anomaly_threshold)
        if not verdicts:
            continue
        means.append(sum(v.misprediction_rate for v in verdicts) / len(verdicts))
    if not means:
        raise InsufficientTrafficError("insufficient traffic: no scannable sequence")
    value = 1.0 - sum(means) / len(means)
    return TrustScore(evaluator=evaluator, target=target, value=value, k_sequences=len(means))


@dataclass(frozen=True)
class KneedleResult:
    x: float
    index: int
    degenerate: bool


def kneedle(x: Sequence[float], y: Sequence[float],
            direction: str = "decreasing", curvature: str = "convex") -> KneedleResult:
    """Knee of a curve: maximum of the normalized difference y_n - x_n after
    flipping the curve into canonical increasing-concave form.

    Ties take the first (smallest-x) maximum. A flat difference curve (e.g.
    a straight line) returns the first x flagged degenerate.
    """
    if len(x) != len(y):
        raise ValueError("x and y must have equal length")
    if len(x) < 3:
        raise ValueError("kneedle needs at least 3 points")
    for a, b in zip(x, x[1:]):
        if not a < b:
            raise ValueError("x must be strictly increasing")
    if direction not in ("increasing", "decreasing"):
        raise ValueError(f"unknown direction {direction!r}")
    if curvature not in ("convex", "concave"):
        raise ValueError(f"unknown curvature {curvature!r}")

    x_span = x[-1] - x[0]
    y_min, y_max = min(y), max(y)
    y_span = y_max - y_min
    if y_span == 0:
        return KneedleResult(x=x[0], index=0, degenerate=True)
    xn = [(v - x[0]) / x_span for v in x]
    yn = [(v - y_min) / y_span for v in y]

    # flip onto the increasing-concave canonical form
    if direction == "decreasing" and curvature == "convex":
        yn = [1.0 - v for v in yn]
    elif direction == "decreasing" and curvature == "concave":
        xn = [1.0 - v for v in reversed(xn)]
        yn = list(reversed(yn))
    elif direction == "increasing" and curvature == "convex":
        xn = [1.0 - v for v in reversed(xn)]
        yn = [1.0 - v for v in reversed(yn)]

    reversed_axes = (direction == "decreasing" and curvature == "concave") or \
                    (direction == "increasing" and curvature == "convex")
    diffs = [yv - xv for xv, yv in zip(xn, yn)]
    peak = max(diffs)
    if peak - min(diffs) == 0.0:
        return KneedleResult(x=x[0], index=0, degenerate=True)
    winners = [i for i, d in enumerate(diffs) if d == peak]
    if reversed_axes:  # map transformed indices back to input order
        winners = [len(diffs) - 1 - i for i in winners]
    best = min(winners)  # ties take the smallest x
    return KneedleResult(x=x[best], index=best, degenerate=False)


@dataclass(frozen=True)
class WindowSelection:
    size: int
    amplitudes: Tuple[Tuple[int, float], ...]
    degenerate: bool


def select_window_size(model: FingerprintModel,
                       calibration: Union[SymbolSequence, Sequence[int]],
                       candidate_sizes: Sequence[int],
                       anomaly_threshold: float = DEFAULT_THRESHOLD) -> WindowSelection:
    """Pick the scan window at the knee of peak-to-peak m_r amplitude.

    For each candidate size the calibration stream is scanned and the
    amplitude max(m_r) - min(m_r) recorded; the knee of that decreasing
    convex curve is the selected size. A flat curve falls back to the
    smallest candidate, flagged degenerate.
    """
    sizes = list(candidate_sizes)
    if len(sizes) < 3:
        raise ValueError("need at least 3 candidate window sizes")
    for a, b in zip(sizes, sizes[1:]):
        if not a < b:
            raise ValueError("candidate sizes must be strictly increasing")
    symbols = _symbols_of(calibration)
    amplitudes = []
    for size in sizes:
        verdicts = scan(model, symbols, size, anomaly_threshold)
        if not verdicts:
            raise InsufficientTrafficError(
                f"calibration stream too short for window size {size}")
        rates = [v.misprediction_rate for v in verdicts]
        amplitudes.append(max(rates) - min(rates))
    knee = kneedle(sizes, amplitudes, direction="decreasing", curvature="convex")
    if knee.degenerate:
        return WindowSelection(size=sizes[0], amplitudes=tuple(zip(sizes, amplitudes)),
                               degenerate=True)
    return WindowSelection(size=int(knee.x), amplitudes=tuple(zip(sizes, amplitudes)),
                           degenerate=False)
