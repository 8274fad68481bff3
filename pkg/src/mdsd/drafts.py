"""Draft-tuple distributions.

A `DraftScheme` describes how the n draft tokens of one decoding step are
produced from the draft-model distribution q. Each scheme exposes

  * a sampler of draft tuples (single `sample_tuple` and batched
    `sample_tuples`),
  * the exact tuple probability `tuple_prob`, and
  * where available, an incremental evaluator of the subset mass
    Q(H) = P(all n drafts land in H) via `make_prefix_q`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dists import Dist, exclude_renorm, top_k_desc

__all__ = [
    "DraftKind",
    "DraftScheme",
    "greedy_tail",
    "sample_tuple",
    "sample_tuples",
    "tuple_prob",
    "make_prefix_q",
    "iter_support",
    "PrefixQ",
]


class DraftKind(Enum):
    WITH_REPLACEMENT = "with-replacement"
    WITHOUT_REPLACEMENT = "without-replacement"
    PRODUCT = "product"
    GREEDY = "greedy"
    SPECHUB = "spechub"


@dataclass(frozen=True, eq=False)
class DraftScheme:
    """A draft construction: the kind, the base distribution(s) and the
    draft count n."""

    kind: DraftKind
    q: Dist | None
    n: int
    qs: tuple[Dist, ...] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("draft count must be >= 1")
        if self.kind is DraftKind.PRODUCT:
            if not self.qs or len(self.qs) != self.n:
                raise ValueError("product scheme needs one distribution per draft")
            sizes = {d.vocab_size for d in self.qs}
            if len(sizes) != 1:
                raise ValueError("product distributions must share a vocabulary")
            return
        if self.q is None:
            raise ValueError(f"{self.kind.value} scheme needs a base distribution")
        if self.kind is DraftKind.WITHOUT_REPLACEMENT:
            if self.n > self.q.support().size:
                raise ValueError(
                    "without-replacement draft count exceeds support size"
                )
        if self.kind is DraftKind.GREEDY and self.n - 1 >= self.q.vocab_size:
            raise ValueError("greedy scheme needs n - 1 < vocab_size")
        if self.kind is DraftKind.SPECHUB:
            if self.n != 2:
                raise ValueError("spechub requires exactly 2 drafts")
            if self.q.vocab_size < 2:
                raise ValueError("spechub needs at least 2 tokens")

    @property
    def vocab_size(self) -> int:
        return self.qs[0].vocab_size if self.kind is DraftKind.PRODUCT else self.q.vocab_size

    # Convenience constructors.
    @staticmethod
    def with_replacement(q: Dist, n: int) -> "DraftScheme":
        return DraftScheme(DraftKind.WITH_REPLACEMENT, q, n)

    @staticmethod
    def without_replacement(q: Dist, n: int) -> "DraftScheme":
        return DraftScheme(DraftKind.WITHOUT_REPLACEMENT, q, n)

    @staticmethod
    def product(qs) -> "DraftScheme":
        qs = tuple(qs)
        return DraftScheme(DraftKind.PRODUCT, None, len(qs), qs)

    @staticmethod
    def greedy(q: Dist, n: int) -> "DraftScheme":
        return DraftScheme(DraftKind.GREEDY, q, n)

    @staticmethod
    def spechub(q: Dist) -> "DraftScheme":
        return DraftScheme(DraftKind.SPECHUB, q, 2)


def greedy_tail(q: Dist, n: int) -> tuple[tuple[int, ...], Dist]:
    """The deterministic top n-1 prefix (descending mass) and the last-draft
    distribution.

    When the top tokens carry all of q's mass the exclusion renormalization
    is undefined; the last draft then falls back to uniform over the
    remaining tokens, which keeps verification target-preserving.
    """
    top = top_k_desc(q, n - 1)
    try:
        tail = exclude_renorm(q, top)
    except ValueError:
        mass = np.ones(q.vocab_size)
        mass[list(top)] = 0.0
        tail = Dist(mass)
    return top, tail


def _spechub_parts(q: Dist) -> tuple[int, Dist]:
    """Top-1 token and the second-draw distribution used when the first draw
    hits it. Degenerate q (all mass on top-1) falls back like `greedy_tail`."""
    top1 = top_k_desc(q, 1)[0]
    try:
        tail = exclude_renorm(q, (top1,))
    except ValueError:
        mass = np.ones(q.vocab_size)
        mass[top1] = 0.0
        tail = Dist(mass)
    return top1, tail


def _draw(dist: Dist, rng: np.random.Generator) -> int:
    # Inverse-CDF draw; cheaper than rng.choice for repeated scalar calls.
    cdf = np.cumsum(dist.mass)
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), dist.vocab_size - 1)


def sample_tuple(scheme: DraftScheme, rng: np.random.Generator) -> tuple[int, ...]:
    """Draw one draft tuple according to the scheme."""
    kind = scheme.kind
    if kind is DraftKind.WITH_REPLACEMENT:
        cdf = np.cumsum(scheme.q.mass)
        idx = np.minimum(
            np.searchsorted(cdf, rng.random(scheme.n), side="right"),
            scheme.vocab_size - 1,
        )
        return tuple(int(t) for t in idx)
    if kind is DraftKind.WITHOUT_REPLACEMENT:
        out: list[int] = []
        current = scheme.q
        for _ in range(scheme.n):
            t = _draw(current, rng)
            out.append(t)
            if len(out) < scheme.n:
                current = exclude_renorm(scheme.q, out)
        return tuple(out)
    if kind is DraftKind.PRODUCT:
        return tuple(_draw(d, rng) for d in scheme.qs)
    if kind is DraftKind.GREEDY:
        top, tail = greedy_tail(scheme.q, scheme.n)
        return top + (_draw(tail, rng),)
    if kind is DraftKind.SPECHUB:
        top1, tail = _spechub_parts(scheme.q)
        first = _draw(scheme.q, rng)
        second = _draw(tail, rng) if first == top1 else top1
        return (first, second)
    raise ValueError(f"unknown scheme kind {kind}")


def sample_tuples(scheme: DraftScheme, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` draft tuples as an int array of shape (count, n).

    The without-replacement path uses the Gumbel-key equivalence of
    sequential renormalized sampling so the whole batch vectorizes.
    """
    kind = scheme.kind
    v = scheme.vocab_size
    if kind is DraftKind.WITH_REPLACEMENT:
        return rng.choice(v, size=(count, scheme.n), p=scheme.q.mass)
    if kind is DraftKind.WITHOUT_REPLACEMENT:
        with np.errstate(divide="ignore"):
            logq = np.log(scheme.q.mass)
        keys = rng.gumbel(size=(count, v)) + logq
        part = np.argpartition(-keys, scheme.n - 1, axis=1)[:, : scheme.n]
        order = np.take_along_axis(keys, part, axis=1).argsort(axis=1)[:, ::-1]
        return np.take_along_axis(part, order, axis=1)
    if kind is DraftKind.PRODUCT:
        cols = [rng.choice(v, size=count, p=d.mass) for d in scheme.qs]
        return np.stack(cols, axis=1)
    if kind is DraftKind.GREEDY:
        top, tail = greedy_tail(scheme.q, scheme.n)
        out = np.empty((count, scheme.n), dtype=np.intp)
        out[:, : scheme.n - 1] = np.asarray(top, dtype=np.intp)
        out[:, -1] = rng.choice(v, size=count, p=tail.mass)
        return out
    if kind is DraftKind.SPECHUB:
        top1, tail = _spechub_parts(scheme.q)
        first = rng.choice(v, size=count, p=scheme.q.mass)
        alt = rng.choice(v, size=count, p=tail.mass)
        second = np.where(first == top1, alt, top1)
        return np.stack([first, second], axis=1)
    raise ValueError(f"unknown scheme kind {kind}")


def tuple_prob(scheme: DraftScheme, tokens) -> float:
    """Exact probability of a draft tuple under the scheme (0 off-support)."""
    t = tuple(int(x) for x in tokens)
    if len(t) != scheme.n:
        raise ValueError(f"tuple length {len(t)} != draft count {scheme.n}")
    v = scheme.vocab_size
    if any(x < 0 or x >= v for x in t):
        raise ValueError("token id out of range")
    kind = scheme.kind
    if kind is DraftKind.WITH_REPLACEMENT:
        return float(np.prod([scheme.q.mass[x] for x in t]))
    if kind is DraftKind.WITHOUT_REPLACEMENT:
        if len(set(t)) != len(t):
            return 0.0
        prob = 1.0
        remaining = 1.0
        for x in t:
            if remaining <= 1e-12:
                return 0.0
            prob *= scheme.q.mass[x] / remaining
            remaining -= scheme.q.mass[x]
        return float(prob)
    if kind is DraftKind.PRODUCT:
        return float(np.prod([d.mass[x] for d, x in zip(scheme.qs, t)]))
    if kind is DraftKind.GREEDY:
        top, tail = greedy_tail(scheme.q, scheme.n)
        if t[: scheme.n - 1] != top:
            return 0.0
        return float(tail.mass[t[-1]])
    if kind is DraftKind.SPECHUB:
        top1, tail = _spechub_parts(scheme.q)
        first, second = t
        if first == second:
            return 0.0
        if first == top1:
            return float(scheme.q.mass[first] * tail.mass[second])
        if second == top1:
            return float(scheme.q.mass[first])
        return 0.0
    raise ValueError(f"unknown scheme kind {kind}")


def iter_support(scheme: DraftScheme):
    """Iterate the tuples with positive probability (small instances only)."""
    v = scheme.vocab_size
    kind = scheme.kind
    if kind is DraftKind.WITH_REPLACEMENT:
        pos = [int(x) for x in scheme.q.support()]
        yield from itertools.product(pos, repeat=scheme.n)
    elif kind is DraftKind.WITHOUT_REPLACEMENT:
        pos = [int(x) for x in scheme.q.support()]
        yield from itertools.permutations(pos, scheme.n)
    elif kind is DraftKind.PRODUCT:
        supports = [[int(x) for x in d.support()] for d in scheme.qs]
        yield from itertools.product(*supports)
    elif kind is DraftKind.GREEDY:
        top, tail = greedy_tail(scheme.q, scheme.n)
        for x in tail.support():
            yield top + (int(x),)
    elif kind is DraftKind.SPECHUB:
        top1, tail = _spechub_parts(scheme.q)
        for x in scheme.q.support():
            x = int(x)
            if x != top1:
                yield (x, top1)
        if scheme.q.mass[top1] > 1e-12:
            for x in tail.support():
                yield (top1, int(x))
    else:
        raise ValueError(f"unknown scheme kind {kind}")


class PrefixQ:
    """Incremental evaluator of Q(H) while tokens are added one at a time.

    Subclasses keep O(1) or O(n) state; after adding tokens x1..xk in any
    order, ``value()`` equals Q({x1..xk}). The accumulator is single-owner
    mutable state: create one per worker rather than sharing across threads.
    """

    def add(self, token: int) -> None:
        raise NotImplementedError

    def value(self) -> float:
        raise NotImplementedError


class _PowerPrefixQ(PrefixQ):
    # With replacement: Q(H) = (sum of q over H) ** n.
    def __init__(self, q: Dist, n: int):
        self._q = q.mass
        self._n = n
        self._sum = 0.0

    def add(self, token: int) -> None:
        self._sum += self._q[token]

    def value(self) -> float:
        return min(self._sum, 1.0) ** self._n


class _ElemSymPrefixQ(PrefixQ):
    # Without replacement: Q(H) = W_{n,H} / W_{n,Sigma}, where W_{k,H} is the
    # degree-k coefficient of prod_{i in H} (1 + q(i) t), maintained with the
    # recurrence W_k += q(x) * W_{k-1}.
    def __init__(self, q: Dist, n: int):
        self._q = q.mass
        self._n = n
        self._w = np.zeros(n + 1)
        self._w[0] = 1.0
        total = np.zeros(n + 1)
        total[0] = 1.0
        for x in q.mass:
            total[1:] += x * total[:-1]
        if total[n] <= 0.0:
            raise ValueError("without-replacement draft count exceeds support size")
        self._w_total = float(total[n])

    def add(self, token: int) -> None:
        qx = self._q[token]
        self._w[1:] += qx * self._w[:-1]

    def value(self) -> float:
        return float(self._w[self._n] / self._w_total)


class _GreedyPrefixQ(PrefixQ):
    # Greedy: Q(H) = sum of the last-draft mass over H when H contains the
    # deterministic top n-1 prefix, else 0.
    def __init__(self, q: Dist, n: int):
        top, tail = greedy_tail(q, n)
        self._top = frozenset(top)
        self._tail = tail.mass
        self._missing = len(top)
        self._sum = 0.0

    def add(self, token: int) -> None:
        if token in self._top:
            self._missing -= 1
        self._sum += self._tail[token]

    def value(self) -> float:
        return self._sum if self._missing == 0 else 0.0


def make_prefix_q(scheme: DraftScheme) -> PrefixQ:
    """Create the scheme's incremental Q(H) evaluator."""
    if scheme.kind is DraftKind.WITH_REPLACEMENT:
        return _PowerPrefixQ(scheme.q, scheme.n)
    if scheme.kind is DraftKind.WITHOUT_REPLACEMENT:
        return _ElemSymPrefixQ(scheme.q, scheme.n)
    if scheme.kind is DraftKind.GREEDY:
        return _GreedyPrefixQ(scheme.q, scheme.n)
    raise ValueError(f"no fast Q for {scheme.kind.value}; use the exact oracle")
