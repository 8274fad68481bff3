"""Shared instance generators for the test suite.

Random instances come in two flavours: integer-grid distributions (masses
k/D for a common denominator) that convert losslessly to rationals for the
exact oracles, and Dirichlet-random float distributions for the fast-path
property checks.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from mdsd.dists import Dist


def grid_weights(rng: np.random.Generator, vocab: int, denom: int, min_positive: int = 1):
    """Integer weights summing to ``denom`` with at least ``min_positive``
    nonzero entries (zeros are otherwise allowed and desirable)."""
    while True:
        w = rng.multinomial(denom, np.full(vocab, 1.0 / vocab))
        if np.count_nonzero(w) >= min_positive:
            return [int(x) for x in w]


def grid_dist(weights) -> Dist:
    return Dist(np.asarray(weights, dtype=np.float64))


def grid_fracs(weights) -> tuple[Fraction, ...]:
    total = sum(weights)
    return tuple(Fraction(int(w), total) for w in weights)


def dirichlet_dist(rng: np.random.Generator, vocab: int, conc: float = 1.0) -> Dist:
    return Dist(rng.dirichlet(np.full(vocab, conc)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
