"""Error metrics over paired predictions and observations."""

from __future__ import annotations

import numpy as np


def _pair(pred, obs) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float)
    o = np.asarray(obs, dtype=float)
    if p.shape != o.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {o.shape}")
    if p.size == 0:
        raise ValueError("no fitness cases")
    return p, o


def rmse(pred, obs) -> float:
    p, o = _pair(pred, obs)
    with np.errstate(over="ignore"):     # diverged models score inf
        return float(np.sqrt(np.mean((p - o) ** 2)))


def mae(pred, obs) -> float:
    p, o = _pair(pred, obs)
    return float(np.mean(np.abs(p - o)))
