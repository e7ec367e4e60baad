"""Storage for computed polynomial coefficients ``nu -> v_nu in V_h``."""
from __future__ import annotations

import csv
import io
from typing import Iterable, Iterator

import numpy as np

from .fields import DiscreteField
from .multiindex import MultiIndex, is_downward_closed


class CoefficientMap:
    """Dof vectors and norms keyed by multi-index.

    Vectors live as rows of one growing array; ``members`` marks the indices
    retained in the current downward-closed set (the rest are margin entries).
    """

    def __init__(self, disc: DiscreteField, kind: str = "taylor", capacity: int = 64):
        self.disc = disc
        self.kind = kind
        self.index: dict[MultiIndex, int] = {}
        self.keys: list[MultiIndex] = []
        self._data = np.zeros((capacity, disc.space.dof_count))
        self._v = np.zeros(capacity)
        self._a = np.zeros(capacity)
        self.members: set[MultiIndex] = set()
        self.load: np.ndarray | None = None

    def __len__(self):
        return len(self.keys)

    def __contains__(self, nu):
        return nu in self.index

    def __getitem__(self, nu: MultiIndex) -> np.ndarray:
        return self._data[self.index[nu]]

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self.keys)

    def rows(self, nus: Iterable[MultiIndex]) -> np.ndarray:
        return np.fromiter((self.index[n] for n in nus), dtype=np.intp)

    @property
    def vectors(self) -> np.ndarray:
        return self._data[: len(self.keys)]

    def _grow(self, need: int):
        cap = len(self._data)
        if need <= cap:
            return
        new = max(need, 2 * cap)
        data = np.zeros((new, self._data.shape[1]))
        data[:cap] = self._data
        self._data = data
        self._v = np.resize(self._v, new)
        self._a = np.resize(self._a, new)

    def insert_many(self, nus: list[MultiIndex], X: np.ndarray, replace: bool = False) -> None:
        X = np.atleast_2d(X)
        fresh = [n for n in nus if n not in self.index]
        if len(fresh) != len(nus) and not replace:
            raise KeyError("index already present")
        self._grow(len(self.keys) + len(fresh))
        for n in fresh:
            self.index[n] = len(self.keys)
            self.keys.append(n)
        r = self.rows(nus)
        self._data[r] = X
        self._v[r] = self.disc.v_norms(X)
        self._a[r] = self.disc.a_norms(X)

    def insert(self, nu: MultiIndex, x: np.ndarray, replace: bool = False) -> None:
        self.insert_many([nu], x[None, :], replace=replace)

    def v_norm(self, nu: MultiIndex) -> float:
        return float(self._v[self.index[nu]])

    def a_norm(self, nu: MultiIndex) -> float:
        return float(self._a[self.index[nu]])

    def v_norms(self, nus: Iterable[MultiIndex] | None = None) -> np.ndarray:
        if nus is None:
            return self._v[: len(self.keys)].copy()
        return self._v[self.rows(nus)]

    def a_norms(self, nus: Iterable[MultiIndex] | None = None) -> np.ndarray:
        if nus is None:
            return self._a[: len(self.keys)].copy()
        return self._a[self.rows(nus)]

    def is_downward_closed(self) -> bool:
        return is_downward_closed(self.keys)

    def norm_items(self, members_only: bool = False) -> list[tuple[MultiIndex, float]]:
        """(nu, V-norm) pairs in canonical order."""
        keys = self.members if members_only else self.keys
        return sorted(((n, self.v_norm(n)) for n in keys), key=lambda t: t[0].sort_key())

    def to_csv(self, members_only: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index_json", "norm", "member", "kind"])
        for n, v in self.norm_items(members_only):
            w.writerow([n.to_json(), repr(v), int(n in self.members), self.kind])
        return buf.getvalue()


def read_norm_csv(text: str) -> list[tuple[MultiIndex, float]]:
    """Parse the (index_json, norm, ...) CSV written by ``CoefficientMap.to_csv``."""
    rows = csv.DictReader(io.StringIO(text))
    return [(MultiIndex.from_json(r["index_json"]), float(r["norm"])) for r in rows]
