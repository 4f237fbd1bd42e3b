"""Bookkeeping shared by the two EM fitters."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class EmTrace:
    """Per-iteration log-likelihood values of an EM run.

    ``values[0]`` belongs to the initial parameters, ``values[i]`` to the
    parameters after the i-th M-step.
    """

    values: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return max(len(self.values) - 1, 0)

    def increments(self) -> np.ndarray:
        return np.diff(np.asarray(self.values, dtype=float))

    def is_monotone(self, slack: float = 1e-9) -> bool:
        return bool(np.all(self.increments() >= -slack))
