"""Numpy fallback for the compiled world checker."""

import numpy as np


def eval_worlds(worlds: np.ndarray, pos: np.ndarray, neg: np.ndarray) -> np.ndarray:
    out = np.zeros(worlds.shape[0], dtype=bool)
    for j in range(pos.shape[0]):
        hit = np.ones(worlds.shape[0], dtype=bool)
        for k in range(worlds.shape[1]):
            col = worlds[:, k]
            hit &= (col & pos[j, k]) == pos[j, k]
            hit &= (col & neg[j, k]) == 0
        out |= hit
    return out.astype(np.uint8)


def all_worlds(m: int) -> np.ndarray:
    return np.arange(1 << m, dtype=np.uint64).reshape(-1, 1)
