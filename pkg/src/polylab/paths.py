from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MartingalePath:
    """One realization M_0, ..., M_n with its running extrema."""

    values: np.ndarray
    beta: float = float("nan")
    dim: int = 0
    running_max: float = field(init=False)
    running_min: float = field(init=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or len(vals) == 0:
            raise ValueError("values must be a non-empty 1-d sequence")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "running_max", float(vals.max()))
        object.__setattr__(self, "running_min", float(vals.min()))

    @property
    def horizon(self) -> int:
        return len(self.values) - 1

    def __len__(self) -> int:
        return len(self.values)
