"""Random drivers: Wiener increments, market marks and loss-jump thinning.

Every path owns three independent streams keyed by (seed, path_index, label),
so draws never depend on batching, thread count or the order paths run in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coefficients import FactorVolatility, LossState, MarketJumpSpec, loss_intensity
from .errors import ThinningBoundError, UsageError

STREAM_LABELS = {"wiener": 0, "market_jumps": 1, "loss_jumps": 2}


@dataclass(frozen=True)
class RngStream:
    """Keyed random stream; equal keys give equal draw sequences."""

    seed: int
    path_index: int
    label: str

    def __post_init__(self):
        if self.label not in STREAM_LABELS:
            raise UsageError(f"unknown stream label '{self.label}' (known: {sorted(STREAM_LABELS)})")
        if self.seed < 0 or self.path_index < 0:
            raise UsageError("seed and path index must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.path_index, STREAM_LABELS[self.label]))
        return np.random.default_rng(ss)


def path_streams(seed: int, path_index: int) -> dict[str, np.random.Generator]:
    return {lab: RngStream(seed, path_index, lab).generator() for lab in STREAM_LABELS}


@dataclass(frozen=True)
class JumpEvent:
    time: float
    kind: str
    mark: float

    def __post_init__(self):
        if self.time < 0:
            raise UsageError("event time must be non-negative")
        if self.kind not in ("market", "loss"):
            raise UsageError(f"unknown event kind '{self.kind}'")


def wiener_increments(vol: FactorVolatility, dt: float, rng: np.random.Generator,
                      n_steps: int | None = None) -> np.ndarray:
    """N(0, dt) draws, one per factor (or an (n_steps, J) block).

    A block equals the same number of consecutive single-step calls.
    """
    if dt < 0:
        raise UsageError("dt must be non-negative")
    shape = (vol.n_factors,) if n_steps is None else (n_steps, vol.n_factors)
    return rng.standard_normal(shape) * np.sqrt(dt)


def market_jump_times(mjump: MarketJumpSpec, horizon: float, rng: np.random.Generator) -> list[JumpEvent]:
    """Compound Poisson events on (0, horizon] with marks drawn from w / sum(w)."""
    times, marks = market_jump_arrays(mjump, horizon, rng)
    return [JumpEvent(float(t), "market", float(x)) for t, x in zip(times, marks)]


def market_jump_arrays(mjump: MarketJumpSpec, horizon: float, rng: np.random.Generator):
    if horizon <= 0:
        raise UsageError("horizon must be positive")
    if not mjump.marks:
        return np.empty(0), np.empty(0)
    rate = mjump.total_mass
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > horizon:
            break
        times.append(t)
    p = np.asarray(mjump.weights) / rate
    idx = rng.choice(len(p), size=len(times), p=p)
    return np.asarray(times), np.asarray(mjump.marks)[idx]


class LossProposals:
    """Dominating Poisson proposals for loss thinning.

    Each proposal consumes three uniforms: inter-arrival, acceptance, size.
    Draws are pulled in fixed-size blocks; the sequence does not depend on
    the block size because uniforms are consumed in order.
    """

    def __init__(self, rng: np.random.Generator, rate_bound: float, block: int = 16):
        if not rate_bound > 0:
            raise UsageError("rate_bound must be positive")
        self.rng = rng
        self.rate_bound = float(rate_bound)
        self.block = block
        self._buf = np.empty((0, 3))
        self._pos = 0
        self.time = 0.0

    def next(self) -> tuple[float, float, float]:
        if self._pos >= len(self._buf):
            self._buf = self.rng.random((self.block, 3))
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        self.time += -np.log1p(-u[0]) / self.rate_bound
        return self.time, float(u[1]), float(u[2])


def next_loss_jump(h_provider: Callable, rate_bound: float, t0: float, horizon: float,
                   rng: np.random.Generator | LossProposals) -> JumpEvent | None:
    """First accepted loss jump in (t0, horizon] by thinning.

    h_provider(t) returns the (HbSurface, LossState) governing the intensity
    at proposal time t. Pass a LossProposals object to continue a stream.
    """
    props = rng if isinstance(rng, LossProposals) else LossProposals(rng, rate_bound)
    props.time = max(props.time, t0)
    while True:
        t, ua, us = props.next()
        if t > horizon:
            return None
        h, loss = h_provider(t)
        if loss.level >= 1.0:
            return None
        li = loss_intensity(h, loss)
        if li.total_rate > rate_bound:
            raise ThinningBoundError(
                f"loss intensity {li.total_rate:.6g} exceeds rate bound {rate_bound:.6g}", time=t)
        if ua * rate_bound < li.total_rate:
            return JumpEvent(t, "loss", li.sample_size(us))
