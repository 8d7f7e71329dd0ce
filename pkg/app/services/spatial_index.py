from typing import Tuple

import numpy as np

QUERY_CHUNK = 1 << 16
_OFFSETS = [(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]


class SpatialIndex:
    """Uniform bucket grid over 2D centers with cell size equal to the query radius.

    A query point only needs the 3x3 block of buckets around its own bucket.
    Buckets are stored as one sorted array of linear keys, so a block lookup
    is a pair of searchsorted calls.
    """

    def __init__(self, positions: np.ndarray, radius: float):
        if radius <= 0:
            raise ValueError("radius must be > 0")
        self.radius = float(radius)
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        n = len(self.positions)
        if n == 0:
            self._lo = np.zeros(2, dtype=np.int64)
            self._span = np.zeros(2, dtype=np.int64)
            self._keys = np.zeros(0, dtype=np.int64)
            self._order = np.zeros(0, dtype=np.int64)
            return
        cells = np.floor(self.positions / self.radius).astype(np.int64)
        self._lo = cells.min(axis=0)
        self._span = cells.max(axis=0) - self._lo + 1
        keys = self._linear(cells)
        self._order = np.argsort(keys, kind="stable")
        self._keys = keys[self._order]

    def __len__(self) -> int:
        return len(self.positions)

    def _linear(self, cells: np.ndarray) -> np.ndarray:
        rel = cells - self._lo
        return rel[:, 0] * self._span[1] + rel[:, 1]

    def _pairs_chunk(self, queries: np.ndarray, offset: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        cells = np.floor(queries / self.radius).astype(np.int64)
        q_all, c_all = [], []
        for dx, dy in _OFFSETS:
            nb = cells + np.array([dx, dy], dtype=np.int64)
            rel = nb - self._lo
            valid = np.all((rel >= 0) & (rel < self._span), axis=1)
            if not np.any(valid):
                continue
            q_valid = np.flatnonzero(valid)
            keys = self._linear(nb[valid])
            start = np.searchsorted(self._keys, keys, side="left")
            stop = np.searchsorted(self._keys, keys, side="right")
            counts = stop - start
            total = int(counts.sum())
            if total == 0:
                continue
            q_rep = np.repeat(q_valid, counts)
            first = np.repeat(start - (np.cumsum(counts) - counts), counts)
            c_rep = self._order[first + np.arange(total)]
            q_all.append(q_rep)
            c_all.append(c_rep)
        if not q_all:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        q = np.concatenate(q_all)
        c = np.concatenate(c_all)
        diff = queries[q] - self.positions[c]
        d2 = np.einsum("ij,ij->i", diff, diff)
        keep = d2 < self.radius * self.radius
        return q[keep] + offset, c[keep], d2[keep]

    def pairs(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All (query, center) pairs closer than the radius, sorted by (query, center).

        Returns query indices, center indices and squared distances.
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
        if len(self) == 0 or len(queries) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        parts = [
            self._pairs_chunk(queries[i : i + QUERY_CHUNK], i)
            for i in range(0, len(queries), QUERY_CHUNK)
        ]
        q = np.concatenate([p[0] for p in parts])
        c = np.concatenate([p[1] for p in parts])
        d2 = np.concatenate([p[2] for p in parts])
        order = np.lexsort((c, q))
        return q[order], c[order], d2[order]

    def neighbors(self, point) -> np.ndarray:
        _, c, _ = self.pairs(np.asarray(point, dtype=np.float64).reshape(1, 2))
        return c

    def has_neighbor(self, queries: np.ndarray) -> np.ndarray:
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
        q, _, _ = self.pairs(queries)
        out = np.zeros(len(queries), dtype=bool)
        out[q] = True
        return out
