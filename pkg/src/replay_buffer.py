"""
Replay buffer with singular-value experience selection
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .config import BUFFER_CONFIG
from .linalg import min_singular_value
from .plant import CONTROL_NAMES, STATE_NAMES


@dataclass(frozen=True)
class BufferEntry:
    state: np.ndarray
    label: np.ndarray
    clipped: bool = False
    step: int = 0


class ReplayBuffer:
    """
    Bounded store of (state, u^a) pairs. Admission maximizes the minimum
    singular value of the stacked feature matrix phi_j(x) of the entries.
    """

    def __init__(self, config: Dict = None):
        self.config = {**BUFFER_CONFIG, **(config or {})}
        self.capacity = self.config["buffer_capacity"]
        self.novelty_floor = self.config["novelty_floor"]
        self.entries: List[BufferEntry] = []
        self._features: Optional[np.ndarray] = None
        self.replacements = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    @property
    def feature_matrix(self) -> np.ndarray:
        if self._features is None:
            return np.empty((0, 0))
        return self._features.copy()

    def metric(self) -> float:
        """Minimum singular value of the cached feature matrix (0 when empty)"""
        if not self.entries:
            return 0.0
        return min_singular_value(self._features)

    def best_replacement(self, phi: np.ndarray) -> Tuple[int, float]:
        """Index whose replacement by `phi` maximizes the metric, first index on ties"""
        best_index, best_value = -1, -np.inf
        for i in range(len(self.entries)):
            trial = self._features.copy()
            trial[i] = phi
            value = min_singular_value(trial)
            if value > best_value:
                best_index, best_value = i, value
        return best_index, best_value

    def offer(self, candidate: BufferEntry, snapshot) -> bool:
        """Admit, replace or reject the candidate; returns whether it was stored"""
        phi = snapshot.features(candidate.state)

        if not self.entries:
            self.entries.append(candidate)
            self._features = phi.reshape(1, -1)
            return True

        if not self.is_full:
            stacked = np.vstack([self._features, phi])
            if min_singular_value(stacked) > self.novelty_floor:
                self.entries.append(candidate)
                self._features = stacked
                return True
            return False

        current = self.metric()
        index, value = self.best_replacement(phi)
        if value > current:
            self.entries[index] = candidate
            self._features[index] = phi
            self.replacements += 1
            assert self.metric() >= current, "replacement decreased the buffer metric"
            logger.debug(f"Buffer replaced entry {index}: metric {current:.3e} -> {value:.3e}")
            return True
        return False

    def refresh(self, snapshot) -> None:
        """Recompute the feature cache under a newly published snapshot; labels are kept"""
        if self.entries:
            self._features = snapshot.features_batch(np.array([e.state for e in self.entries]))

    def snapshot_for_training(self, exclude_clipped: bool = False) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
        """Immutable copy of the (state, label) pairs"""
        pairs = []
        for entry in self.entries:
            if exclude_clipped and entry.clipped:
                continue
            state = np.array(entry.state, dtype=float)
            label = np.array(entry.label, dtype=float)
            state.flags.writeable = False
            label.flags.writeable = False
            pairs.append((state, label))
        return tuple(pairs)

    def clipped_fraction(self) -> float:
        if not self.entries:
            return 0.0
        return sum(e.clipped for e in self.entries) / len(self.entries)

    def to_frame(self) -> pd.DataFrame:
        columns = ["step", *STATE_NAMES, *(f"label_{n}" for n in CONTROL_NAMES), "clipped"]
        rows = [
            [e.step, *np.asarray(e.state, dtype=float), *np.asarray(e.label, dtype=float), bool(e.clipped)]
            for e in self.entries
        ]
        return pd.DataFrame(rows, columns=columns)
