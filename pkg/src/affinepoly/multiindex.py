"""Finitely supported multi-indices and downward-closed index sets."""
from __future__ import annotations

import json
import math
from typing import Iterable, Iterator, Mapping, Sequence


class MultiIndex:
    """Immutable sparse multi-index ``nu = (nu_1, nu_2, ...)``.

    Stored as a sorted tuple of ``(coordinate, exponent)`` pairs with
    coordinates starting at 1 and no zero exponents.
    """

    __slots__ = ("items", "_hash", "_order")

    def __init__(self, entries: Mapping[int, int] | Iterable[tuple[int, int]] = ()):
        if isinstance(entries, Mapping):
            entries = entries.items()
        items = []
        for j, k in entries:
            j, k = int(j), int(k)
            if j < 1:
                raise ValueError(f"coordinate must be >= 1, got {j}")
            if k < 0:
                raise ValueError(f"exponent must be >= 0, got {k}")
            if k:
                items.append((j, k))
        items.sort()
        for (a, _), (b, _) in zip(items, items[1:]):
            if a == b:
                raise ValueError(f"duplicate coordinate {a}")
        self._set(tuple(items))

    def _set(self, items):
        self.items = items
        self._hash = hash(items)
        self._order = sum(k for _, k in items)

    @classmethod
    def _from_items(cls, items: tuple) -> "MultiIndex":
        obj = cls.__new__(cls)
        obj._set(items)
        return obj

    @classmethod
    def zero(cls) -> "MultiIndex":
        return _ZERO

    @classmethod
    def unit(cls, j: int, k: int = 1) -> "MultiIndex":
        return cls({j: k})

    @classmethod
    def from_dense(cls, dense: Sequence[int]) -> "MultiIndex":
        return cls((j + 1, k) for j, k in enumerate(dense))

    def __getitem__(self, j: int) -> int:
        for i, k in self.items:
            if i == j:
                return k
            if i > j:
                break
        return 0

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return isinstance(other, MultiIndex) and self.items == other.items

    def __lt__(self, other: "MultiIndex") -> bool:
        return self.sort_key() < other.sort_key()

    def __repr__(self):
        if not self.items:
            return "MultiIndex(0)"
        return "MultiIndex({" + ", ".join(f"{j}: {k}" for j, k in self.items) + "})"

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.items)

    @property
    def total_order(self) -> int:
        return self._order

    @property
    def max_coordinate(self) -> int:
        return self.items[-1][0] if self.items else 0

    def dense(self, length: int | None = None) -> tuple[int, ...]:
        n = self.max_coordinate if length is None else length
        out = [0] * n
        for j, k in self.items:
            if j <= n:
                out[j - 1] = k
        return tuple(out)

    def sort_key(self) -> tuple:
        """Canonical order: total order first, then lexicographic on the
        dense representation with larger leading exponents first (so
        ``e_1 < e_2``)."""
        key = [self._order]
        for j, k in self.items:
            key.append(j)
            key.append(-k)
        return tuple(key)

    def add(self, j: int, k: int = 1) -> "MultiIndex":
        """Return ``nu + k e_j``."""
        items = list(self.items)
        for pos, (i, v) in enumerate(items):
            if i == j:
                items[pos] = (i, v + k)
                return MultiIndex._from_items(tuple(items))
            if i > j:
                items.insert(pos, (j, k))
                return MultiIndex._from_items(tuple(items))
        items.append((j, k))
        return MultiIndex._from_items(tuple(items))

    def sub(self, j: int) -> "MultiIndex":
        """Return ``nu - e_j``; requires ``j`` in the support."""
        items = list(self.items)
        for pos, (i, v) in enumerate(items):
            if i == j:
                if v == 1:
                    del items[pos]
                else:
                    items[pos] = (i, v - 1)
                return MultiIndex._from_items(tuple(items))
        raise ValueError(f"coordinate {j} not in support of {self!r}")

    def backward_neighbors(self) -> Iterator[tuple[int, "MultiIndex"]]:
        for j, _ in self.items:
            yield j, self.sub(j)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        d = dict(self.items)
        for j, k in other.items:
            d[j] = d.get(j, 0) + k
        return MultiIndex(d)

    def to_json(self) -> str:
        return json.dumps({str(j): k for j, k in self.items}, separators=(",", ":"))

    def to_dict(self) -> dict[str, int]:
        return {str(j): k for j, k in self.items}

    @classmethod
    def from_json(cls, data: str | Mapping) -> "MultiIndex":
        if isinstance(data, str):
            data = json.loads(data)
        return cls({int(j): int(k) for j, k in data.items()})


_ZERO = MultiIndex._from_items(())


def total_order(nu: MultiIndex) -> int:
    return nu.total_order


def factorial_ratio(nu: MultiIndex, exact: bool = False):
    """Multinomial coefficient ``|nu|! / nu!``.

    With ``exact=True`` returns a Python int; otherwise a float, raising
    ``OverflowError`` when ``|nu| > 170``.
    """
    n = nu.total_order
    if exact:
        out = math.factorial(n)
        for _, k in nu:
            out //= math.factorial(k)
        return out
    if n > 170:
        raise OverflowError(f"|nu| = {n} exceeds the float factorial range")
    return float(math.factorial(n) // math.prod(math.factorial(k) for _, k in nu))


def monomial_weight(rho: Sequence[float], nu: MultiIndex) -> float:
    """``rho^nu`` accumulated in the log domain; ``rho[j-1]`` is ``rho_j``."""
    if not nu.items:
        return 1.0
    return math.exp(sum(k * math.log(rho[j - 1]) for j, k in nu))


def legendre_weight(nu: MultiIndex) -> float:
    """``a_nu = prod_j sqrt(2 nu_j + 1)``."""
    return math.sqrt(math.prod(2 * k + 1 for _, k in nu))


def is_downward_closed(indices: Iterable[MultiIndex]) -> bool:
    s = set(indices)
    if _ZERO not in s:
        return False
    return all(mu in s for nu in s for _, mu in nu.backward_neighbors())


def brute_force_margin(members: Iterable[MultiIndex], dim: int) -> set[MultiIndex]:
    """Reduced margin straight from its definition (slow; used as an oracle)."""
    s = set(members)
    out = set()
    for nu in s:
        for j in range(1, dim + 1):
            mu = nu.add(j)
            if mu in s:
                continue
            if all(b in s for _, b in mu.backward_neighbors()):
                out.add(mu)
    return out


class DownwardClosedSet:
    """Downward-closed set over coordinates ``1..dim`` with its reduced margin.

    ``add`` mutates in place; ``expand`` returns an updated copy. With
    ``max_degree`` set, margin entries never exceed that per-coordinate degree.
    """

    def __init__(self, dim: int, max_degree: int | None = None):
        if dim < 0:
            raise ValueError("dim must be nonnegative")
        self.dim = int(dim)
        self.max_degree = max_degree
        self._members: dict[MultiIndex, None] = {_ZERO: None}
        # forward coordinates of each member that are themselves members
        self._children: dict[MultiIndex, set[int]] = {_ZERO: set()}
        self.reduced_margin: set[MultiIndex] = (
            {MultiIndex.unit(j) for j in range(1, self.dim + 1)} if max_degree != 0 else set()
        )

    @classmethod
    def from_indices(cls, indices: Iterable[MultiIndex], dim: int, max_degree: int | None = None) -> "DownwardClosedSet":
        indices = sorted(set(indices), key=MultiIndex.sort_key)
        if not is_downward_closed(indices):
            raise ValueError("index set is not downward closed")
        out = cls(dim, max_degree)
        for nu in indices:
            if nu.max_coordinate > dim:
                raise ValueError(f"{nu!r} uses a coordinate beyond dim={dim}")
            if nu not in out:
                out.add(nu)
        return out

    def __contains__(self, nu):
        return nu in self._members

    def __len__(self):
        return len(self._members)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self._members)

    def members(self) -> list[MultiIndex]:
        """Members in insertion order."""
        return list(self._members)

    def sorted(self) -> list[MultiIndex]:
        return sorted(self._members, key=MultiIndex.sort_key)

    def copy(self) -> "DownwardClosedSet":
        out = DownwardClosedSet.__new__(DownwardClosedSet)
        out.dim = self.dim
        out.max_degree = self.max_degree
        out._members = dict(self._members)
        out._children = {k: set(v) for k, v in self._children.items()}
        out.reduced_margin = set(self.reduced_margin)
        return out

    def _admissible(self, mu: MultiIndex) -> bool:
        return all(b in self._members for _, b in mu.backward_neighbors())

    def add(self, nu: MultiIndex) -> list[MultiIndex]:
        """Insert ``nu`` (must lie in the reduced margin); returns the indices
        newly added to the margin."""
        if nu not in self.reduced_margin:
            raise ValueError(f"{nu!r} is not in the reduced margin")
        self.reduced_margin.discard(nu)
        self._members[nu] = None
        self._children[nu] = set()
        for j, b in nu.backward_neighbors():
            self._children[b].add(j)

        # nu + e_j with j outside supp(nu) needs nu - e_k + e_j in the set,
        # i.e. j is a child of nu - e_k; scan the smallest such child set.
        supp = nu.support
        if not supp:
            candidates = range(1, self.dim + 1)
        else:
            best = min((self._children[nu.sub(k)] for k in supp), key=len)
            candidates = set(best) | set(supp)
        new = []
        for j in sorted(candidates):
            if j > self.dim:
                continue
            if self.max_degree is not None and nu[j] >= self.max_degree:
                continue
            mu = nu.add(j)
            if mu in self._members or mu in self.reduced_margin:
                continue
            if self._admissible(mu):
                self.reduced_margin.add(mu)
                new.append(mu)
        return new

    def expand(self, nu: MultiIndex) -> "DownwardClosedSet":
        out = self.copy()
        out.add(nu)
        return out


def indices_to_json(indices: Iterable[MultiIndex]) -> str:
    return json.dumps([nu.to_dict() for nu in indices], separators=(",", ":"))


def indices_from_json(data: str) -> list[MultiIndex]:
    return [MultiIndex.from_json(d) for d in json.loads(data)]
