"""Synthetic payload generation for trace construction.

Two generators: a quantitative random walk whose steps never exceed a hop
bound, and a categorical generator that holds each drawn value for a
stability period. Both are fully determined by their seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import List, Sequence

from .trace import PSH_FLAG, Packet, PayloadValue


class PayloadShortfallError(ValueError):
    """More payload-bearing packets than generated values."""

    def __init__(self, missing: int):
        self.missing = missing
        super().__init__(f"{missing} payload values missing")


@dataclass(frozen=True)
class QuantGenParams:
    range_low: float
    range_high: float
    hop: float
    n: int
    rng_seed: int

    def __post_init__(self):
        if self.range_low > self.range_high:
            raise ValueError("range_low must not exceed range_high")
        if self.hop < 0:
            raise ValueError("hop must be non-negative")
        if self.n < 1:
            raise ValueError("n must be at least 1")


@dataclass(frozen=True)
class CatGenParams:
    categories: Sequence[str]
    stability_min: int
    stability_max: int
    n: int
    rng_seed: int

    def __post_init__(self):
        if not self.categories:
            raise ValueError("categories must be non-empty")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("categories must be distinct")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if self.n > 0:
            if not 1 <= self.stability_min <= self.stability_max:
                raise ValueError("need 1 <= stability_min <= stability_max")
            if self.stability_max > self.n:
                raise ValueError("stability_max must not exceed n")


def gen_quantitative(params: QuantGenParams) -> List[float]:
    """Bounded random walk: each value uniform on the range clipped to
    [previous - hop, previous + hop]."""
    rng = random.Random(params.rng_seed)
    lo, hi = params.range_low, params.range_high
    values = [rng.uniform(lo, hi)]
    for _ in range(params.n - 1):
        prev = values[-1]
        values.append(rng.uniform(max(lo, prev - params.hop),
                                  min(hi, prev + params.hop)))
    return values


def gen_categorical(params: CatGenParams) -> List[str]:
    """Runs of one category each; a drawn stability period s yields a run of
    s + 1 values, the final run truncated to fit n exactly.

    Consecutive runs never repeat a label (the draw excludes the previous
    run's category), so every maximal constant run really is one drawn run
    and the stability bounds hold exactly.
    """
    rng = random.Random(params.rng_seed)
    values: List[str] = []
    previous = None
    while len(values) < params.n:
        stability = rng.randint(params.stability_min, params.stability_max)
        pool = [c for c in params.categories if c != previous] or list(params.categories)
        value = rng.choice(pool)
        run = min(stability + 1, params.n - len(values))
        values.extend([value] * run)
        previous = value
    return values


def attach_payloads(packets: Sequence[Packet], values: Sequence[object]) -> List[Packet]:
    """Attach generated values, in order, to the PSH-flagged packets.

    Values may be floats/ints (numeric payloads), strings (categorical) or
    ready-made :class:`PayloadValue` instances. Packets without the PSH bit
    pass through untouched. Raises :class:`PayloadShortfallError` if the
    PSH packets outnumber the values; leftover values are ignored.
    """
    needed = sum(1 for p in packets if p.tcp_flags & PSH_FLAG)
    if needed > len(values):
        raise PayloadShortfallError(needed - len(values))
    out: List[Packet] = []
    it = iter(values)
    for p in packets:
        if not p.tcp_flags & PSH_FLAG:
            out.append(p)
            continue
        value = next(it)
        if isinstance(value, PayloadValue):
            payload = value
        elif isinstance(value, str):
            payload = PayloadValue.categorical(value)
        else:
            payload = PayloadValue.numeric(value)
        out.append(Packet(
            timestamp=p.timestamp,
            src=p.src,
            dst=p.dst,
            src_port=p.src_port,
            tcp_flags=p.tcp_flags,
            protocol=p.protocol,
            length=p.length,
            payload=payload,
        ))
    return out
