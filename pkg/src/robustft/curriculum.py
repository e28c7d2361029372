"""Schedules for the perturbation probability q.

Every update goes through ``q <- clip(q + dq, 0, 1)``. Linear schedules use
a constant ``dq = c``; adaptive schedules use the change in an exponential
moving average of evaluation scores, ``dq = eta * (ema_n - ema_{n-1})`` with
``ema_n = beta * R_n + (1 - beta) * ema_{n-1}``. The first adaptive update
seeds the average with the first score, so it never moves q.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from robustft.errors import ConfigError, NumericError


class CurriculumMode(str, enum.Enum):
    FIXED = "fixed"
    LINEAR = "linear"
    ADAPTIVE = "adaptive"

    @classmethod
    def parse(cls, value) -> "CurriculumMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown curriculum mode {value!r}") from None


@dataclass(frozen=True)
class CurriculumState:
    mode: CurriculumMode
    q: float
    q_init: float
    q_max: float = 1.0
    step: float = 0.0  # c, linear only
    intervals: int = 0  # K, linear only; 0 when unknown
    eta: float = 1.0
    beta: float = 0.9
    ema: float | None = None
    prev_ema: float | None = None
    n: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", CurriculumMode.parse(self.mode))
        if not 0.0 <= self.q <= 1.0 or not 0.0 <= self.q_init <= 1.0:
            raise ConfigError("q and q_init must lie in [0, 1]")
        if self.mode is CurriculumMode.ADAPTIVE and not (0.0 < self.beta <= 1.0):
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")


def clip_q(q_raw: float) -> float:
    if not math.isfinite(q_raw):
        raise NumericError(f"non-finite q {q_raw}")
    return min(max(q_raw, 0.0), 1.0)


def linear_step(q_init: float, q_max: float, intervals: int) -> float:
    """Step c so that q reaches q_max after ``intervals`` updates."""
    if intervals < 1:
        raise ConfigError("need at least one evaluation interval")
    return (q_max - q_init) / intervals


def fixed(q: float) -> CurriculumState:
    return CurriculumState(CurriculumMode.FIXED, q, q, q_max=q)


def linear(q_init: float, q_max: float, intervals: int) -> CurriculumState:
    return CurriculumState(CurriculumMode.LINEAR, q_init, q_init, q_max=q_max,
                           step=linear_step(q_init, q_max, intervals), intervals=intervals)


def adaptive(q_init: float, eta: float, beta: float = 0.9) -> CurriculumState:
    return CurriculumState(CurriculumMode.ADAPTIVE, q_init, q_init, eta=eta, beta=beta)


def current_q(state: CurriculumState) -> float:
    if state.mode is CurriculumMode.FIXED:
        return state.q_init
    return state.q


def update_linear(state: CurriculumState) -> CurriculumState:
    if state.mode is not CurriculumMode.LINEAR:
        raise ConfigError("update_linear on a non-linear curriculum")
    n = state.n + 1
    # Landing on q_max exactly at the K-th update avoids round-off from summing c K times.
    q = clip_q(state.q_max) if n == state.intervals else clip_q(state.q + state.step)
    return replace(state, q=q, n=n)


def update_adaptive(state: CurriculumState, score: float) -> CurriculumState:
    if state.mode is not CurriculumMode.ADAPTIVE:
        raise ConfigError("update_adaptive on a non-adaptive curriculum")
    if not math.isfinite(score):
        raise NumericError(f"non-finite evaluation score {score}")
    prev = score if state.ema is None else state.ema
    ema = state.beta * score + (1.0 - state.beta) * prev
    dq = state.eta * (ema - prev)
    return replace(state, q=clip_q(state.q + dq), ema=ema, prev_ema=prev, n=state.n + 1)


def update(state: CurriculumState, score: float | None = None) -> CurriculumState:
    """Dispatch on mode; fixed schedules only advance the counter."""
    if state.mode is CurriculumMode.LINEAR:
        return update_linear(state)
    if state.mode is CurriculumMode.ADAPTIVE:
        return update_adaptive(state, score)
    return replace(state, n=state.n + 1)


def matched_q_max(q_init: float, target_mean: float, intervals: int) -> float:
    """q_max giving a linear trajectory the requested average exposure.

    The linear schedule holds q_init + k * c during interval k (k = 0..K-1),
    so its time average is q_init + c * (K - 1) / 2 with c = (q_max - q_init) / K.
    """
    if intervals < 1:
        raise ConfigError("need at least one evaluation interval")
    if intervals == 1:
        return q_init
    return q_init + 2.0 * (target_mean - q_init) * intervals / (intervals - 1)
