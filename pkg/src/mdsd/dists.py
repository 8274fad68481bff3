"""Probability-vector primitives: validation, temperature softmax, residuals,
exclusion renormalization and top-k selection.

Everything downstream works with `Dist` objects. A `Dist` is renormalized once
on construction and is immutable afterwards, so the sum-to-one invariant can be
assumed everywhere without re-checking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dist",
    "LogitsRecord",
    "softmax_temp",
    "residual_dist",
    "exclude_renorm",
    "top_k",
    "top_k_desc",
    "tv_distance",
]

# Mass below this is treated as exactly zero when deciding support questions.
_ZERO_MASS = 1e-12


@dataclass(frozen=True, eq=False)
class Dist:
    """A probability distribution over token ids ``0..vocab_size-1``.

    The mass vector is validated (finite, non-negative, positive total) and
    renormalized once here; the backing array is marked read-only.
    """

    mass: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.mass, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("empty distribution")
        if not np.all(np.isfinite(arr)):
            raise ValueError("distribution mass must be finite")
        if np.any(arr < 0):
            raise ValueError("distribution mass must be non-negative")
        total = float(arr.sum())
        if total <= _ZERO_MASS:
            raise ValueError("distribution has no mass")
        arr = arr / total
        arr.flags.writeable = False
        object.__setattr__(self, "mass", arr)

    @property
    def vocab_size(self) -> int:
        return int(self.mass.size)

    @staticmethod
    def uniform(vocab_size: int) -> "Dist":
        return Dist(np.full(vocab_size, 1.0 / vocab_size))

    @staticmethod
    def one_hot(vocab_size: int, token: int) -> "Dist":
        mass = np.zeros(vocab_size)
        mass[token] = 1.0
        return Dist(mass)

    def support(self) -> np.ndarray:
        """Token ids with mass above the zero threshold."""
        return np.flatnonzero(self.mass > _ZERO_MASS)


@dataclass(frozen=True, eq=False)
class LogitsRecord:
    """One position's raw logits for the target model and the draft model."""

    p_logits: np.ndarray
    q_logits: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_logits, dtype=np.float64)
        q = np.asarray(self.q_logits, dtype=np.float64)
        if p.ndim != 1 or q.ndim != 1 or p.size == 0:
            raise ValueError("logits must be non-empty 1-d vectors")
        if p.size != q.size:
            raise ValueError(
                f"logits length mismatch: {p.size} vs {q.size}"
            )
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("logits must be finite")
        object.__setattr__(self, "p_logits", p)
        object.__setattr__(self, "q_logits", q)

    @property
    def vocab_size(self) -> int:
        return int(self.p_logits.size)


def softmax_temp(logits, temperature: float) -> Dist:
    """Temperature softmax. ``temperature == 0`` collapses to the argmax
    one-hot (ties broken toward the lowest token id)."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("empty distribution")
    if temperature < 0:
        raise ValueError("temperature must be non-negative")
    finite = np.isfinite(arr)
    if not np.all(finite):
        # -inf logits mean "token masked out"; anything else is malformed.
        if np.any(arr[~finite] != -np.inf):
            raise ValueError("logits must be finite (or -inf for masked)")
    if temperature == 0.0:
        return Dist.one_hot(arr.size, int(np.argmax(arr)))
    scaled = arr / temperature
    scaled = scaled - np.max(scaled)
    return Dist(np.exp(scaled))


def residual_dist(p: Dist, q: Dist) -> Dist:
    """Normalized positive part of ``p - q``.

    When ``p == q`` the positive part vanishes; the uniform distribution is
    returned so the result is always a valid `Dist`.
    """
    if p.vocab_size != q.vocab_size:
        raise ValueError("size mismatch between p and q")
    pos = np.maximum(p.mass - q.mass, 0.0)
    total = pos.sum()
    if total <= _ZERO_MASS:
        return Dist.uniform(p.vocab_size)
    return Dist(pos)


def exclude_renorm(q: Dist, exclude) -> Dist:
    """Zero out the tokens in ``exclude`` and renormalize the rest."""
    idx = np.asarray(sorted(set(int(t) for t in exclude)), dtype=np.intp)
    if idx.size and (idx[0] < 0 or idx[-1] >= q.vocab_size):
        raise ValueError("exclusion set contains out-of-range token ids")
    mass = q.mass.copy()
    mass[idx] = 0.0
    if mass.sum() <= _ZERO_MASS:
        raise ValueError("exhausted support")
    return Dist(mass)


def _mass_order(q: Dist) -> np.ndarray:
    # Descending mass, ties toward the lowest token id.
    return np.lexsort((np.arange(q.vocab_size), -q.mass))


def top_k(q: Dist, k: int) -> tuple[int, ...]:
    """The ``k`` largest-mass tokens as a sorted id tuple."""
    if k < 0 or k > q.vocab_size:
        raise ValueError("k out of range")
    return tuple(sorted(int(t) for t in _mass_order(q)[:k]))


def top_k_desc(q: Dist, k: int) -> tuple[int, ...]:
    """Like `top_k` but ordered by descending mass (ties by lowest id)."""
    if k < 0 or k > q.vocab_size:
        raise ValueError("k out of range")
    return tuple(int(t) for t in _mass_order(q)[:k])


def tv_distance(a: Dist, b: Dist) -> float:
    """Total variation distance, half the L1 difference."""
    if a.vocab_size != b.vocab_size:
        raise ValueError("size mismatch")
    return 0.5 * float(np.abs(a.mass - b.mass).sum())
