"""Piecewise-constant jump paths recorded as (time, value) change points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FrequencyPath:
    """A cadlag path: ``values[k]`` holds on ``[times[k], times[k+1])``.

    ``times[0]`` is the start time (usually 0) and the last value holds
    forever after; only change points are recorded.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if len(self.times) == 0:
            raise ValueError("a path needs at least its initial point")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def value_at(self, t: float):
        """Value of the path at time t (right-continuous)."""
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        if idx < 0:
            raise ValueError(f"t={t} precedes the path start {self.times[0]}")
        return self.values[idx]

    @property
    def final(self):
        return self.values[-1]

    def __len__(self) -> int:
        return len(self.times)
