"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


GRAD_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    """||a - n|| / max(||a||, ||n||, floor).

    The floor keeps exactly-zero gradients (e.g. a bias followed by instance
    norm) from turning finite-difference round-off into a large ratio.
    """
    num = float(np.linalg.norm(analytic - numeric))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return num / den


def numeric_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-6, indices=None) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. selected flat entries of ``x``."""
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx) if indices is not None else flat.size)
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        fp = float(f().data)
        flat[i] = old - eps
        fm = float(f().data)
        flat[i] = old
        out[j] = (fp - fm) / (2 * eps)
    return out


def check_gradients(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    per_input: dict | None = None,
) -> float:
    """Max relative error between tape gradients and finite differences over ``inputs``.

    ``f`` must rebuild its graph from the current contents of ``inputs`` on
    every call. With ``max_entries`` only a random subset of each input's
    entries is perturbed.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 inputs, got {t.dtype}")
        t.requires_grad = True
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss, params=inputs)
    worst = 0.0
    for t in inputs:
        g = grads[t].reshape(-1)
        if max_entries is not None and t.size > max_entries:
            idx = np.sort(rng.choice(t.size, size=max_entries, replace=False))
        else:
            idx = np.arange(t.size)
        num = numeric_grad(f, t, eps=eps, indices=list(idx))
        err = relative_error(g[idx], num)
        if per_input is not None:
            per_input[t.name or str(len(per_input))] = err
        worst = max(worst, err)
    return worst
