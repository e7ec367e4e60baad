"""Reduced-margin bookkeeping shared by the greedy Taylor and adaptive Galerkin
loops: each candidate carries a score that is either exact or an upper bound."""
from __future__ import annotations

import numpy as np

from .multiindex import MultiIndex


class RowStore:
    """Growing 2-D float array addressed by multi-index."""

    def __init__(self, width: int, capacity: int = 256, dtype=float):
        self.width = width
        self.row: dict[MultiIndex, int] = {}
        self.data = np.zeros((capacity, width), dtype=dtype)

    def __contains__(self, nu):
        return nu in self.row

    def add(self, nus: list[MultiIndex], values: np.ndarray) -> None:
        n = len(self.row)
        need = n + len(nus)
        if need > len(self.data):
            grown = np.zeros((max(need, 2 * len(self.data)), self.width), dtype=self.data.dtype)
            grown[:n] = self.data[:n]
            self.data = grown
        for k, nu in enumerate(nus):
            self.row[nu] = n + k
        self.data[n:need] = values


class Frontier:
    def __init__(self):
        self.items: list[MultiIndex] = []
        self.pos: dict[MultiIndex, int] = {}
        self.score = np.zeros(0)
        self.exact = np.zeros(0, dtype=bool)
        self.alive = np.zeros(0, dtype=bool)

    def __len__(self):
        return len(self.pos)

    def __contains__(self, nu):
        return nu in self.pos

    def add(self, nus: list[MultiIndex], scores, exact=False) -> None:
        if not nus:
            return
        n = len(self.items)
        self.items.extend(nus)
        for k, nu in enumerate(nus):
            self.pos[nu] = n + k
        self.score = np.concatenate([self.score, np.asarray(scores, dtype=float)])
        self.exact = np.concatenate([self.exact, np.broadcast_to(np.asarray(exact, dtype=bool), (len(nus),))])
        self.alive = np.concatenate([self.alive, np.ones(len(nus), dtype=bool)])

    def set_exact(self, nus: list[MultiIndex], values) -> None:
        p = np.fromiter((self.pos[n] for n in nus), dtype=np.intp, count=len(nus))
        self.score[p] = values
        self.exact[p] = True

    def remove(self, nus) -> None:
        for nu in nus:
            self.alive[self.pos.pop(nu)] = False
        if len(self.pos) < len(self.items) // 2:
            self._compact()

    def _compact(self):
        keep = np.flatnonzero(self.alive)
        self.items = [self.items[k] for k in keep]
        self.score = self.score[keep]
        self.exact = self.exact[keep]
        self.alive = np.ones(len(keep), dtype=bool)
        self.pos = {nu: k for k, nu in enumerate(self.items)}

    def pending(self) -> list[MultiIndex]:
        """Candidates whose score is still only a bound, canonical order."""
        p = np.flatnonzero(self.alive & ~self.exact)
        return sorted((self.items[k] for k in p), key=MultiIndex.sort_key)

    def live(self) -> list[MultiIndex]:
        return sorted(self.pos, key=MultiIndex.sort_key)

    def scores(self, nus) -> np.ndarray:
        return self.score[[self.pos[n] for n in nus]]

    def top(self, K: int) -> list[MultiIndex]:
        """``K`` highest-scoring candidates; ties at the cut go by canonical order."""
        live = np.flatnonzero(self.alive)
        if K >= len(live):
            return sorted((self.items[k] for k in live), key=MultiIndex.sort_key)
        s = self.score[live]
        cut = np.partition(s, len(s) - K)[len(s) - K]
        above = live[s > cut]
        tied = sorted((self.items[k] for k in live[s == cut]), key=MultiIndex.sort_key)
        chosen = [self.items[k] for k in above] + tied[: K - len(above)]
        return sorted(chosen, key=MultiIndex.sort_key)

    def prefix_by_mass(self, fraction: float) -> list[MultiIndex]:
        """Smallest set of top-scoring candidates holding ``fraction`` of the
        total squared score (ties by canonical order)."""
        live = np.flatnonzero(self.alive)
        if len(live) == 0:
            return []
        s = self.score[live]
        srt = np.sort(s)[::-1]
        mass = np.cumsum(srt**2)
        n = min(int(np.searchsorted(mass, fraction * mass[-1] * (1 - 1e-14))) + 1, len(srt))
        return self.top(n)
