"""Paged key/value cache with per-page summary statistics.

Each KV head owns a logically ordered list of pages; physical pages come
from a shared pool through a bump allocator with a free list (nothing is
evicted, the free list exists so reuse has a home later). A page holds up
to ``page_size`` rows. Appends always land in the last logical page of the
owning head, and that page's cached statistics are recomputed exactly from
its raw rows, so cached stats never drift.

Per page the cache stores the per-dimension mean of its keys and a single
scalar spread value: the l2 norm of the vector of per-dimension population
standard deviations (divisor = row count). A partial trailing page uses
only the rows it actually holds.

Concurrency: appends are single-writer; everything else is read-only and
safe to call concurrently with other reads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SNAPSHOT_MAGIC = b"UNQK"
SNAPSHOT_VERSION = 1


class CapacityError(RuntimeError):
    """Raised when the physical page pool is exhausted."""


@dataclass(frozen=True)
class CacheLayout:
    """Static shape of a cache: heads, head dimension, page size, pool size."""

    num_kv_heads: int
    head_dim: int
    page_size: int = 8
    max_pages: int = 4096

    def __post_init__(self) -> None:
        if self.num_kv_heads < 1 or self.head_dim < 1:
            raise ValueError("num_kv_heads and head_dim must be positive")
        if self.page_size < 1 or self.max_pages < 1:
            raise ValueError("page_size and max_pages must be positive")


@dataclass
class PageStats:
    """Summary of one page: row count, mean key vector, scalar key spread."""

    count: int
    mean: np.ndarray  # (head_dim,) f32
    std: float


def compute_page_stats(keys: np.ndarray) -> PageStats:
    """Compute PageStats for a block of key rows.

    Accumulates in f64 and rounds the results to f32. The scalar spread is
    the l2 norm of the per-dimension population standard deviations.
    """
    rows = np.asarray(keys, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("keys must be a non-empty (count, head_dim) array")
    mean = rows.mean(axis=0)
    var = np.mean((rows - mean) ** 2, axis=0)
    std = float(np.float32(np.sqrt(var.sum())))
    return PageStats(count=rows.shape[0], mean=mean.astype(np.float32), std=std)


class PageTable:
    """Logical-to-physical page mapping per head, plus the pool free list."""

    def __init__(self, num_kv_heads: int) -> None:
        self._maps: list[np.ndarray] = [
            np.empty(4, dtype=np.int64) for _ in range(num_kv_heads)
        ]
        self._lens = [0] * num_kv_heads
        self._owner: dict[int, tuple[int, int]] = {}  # pid -> (head, logical)
        self.free_list: list[int] = []

    def num_pages(self, head: int) -> int:
        return self._lens[head]

    def append_page(self, head: int, pid: int) -> None:
        if pid in self._owner:
            raise ValueError(f"physical page {pid} already mapped")
        n = self._lens[head]
        buf = self._maps[head]
        if n == buf.shape[0]:
            grown = np.empty(2 * n, dtype=np.int64)
            grown[:n] = buf
            self._maps[head] = buf = grown
        buf[n] = pid
        self._lens[head] = n + 1
        self._owner[pid] = (head, n)

    def mapping(self, head: int) -> np.ndarray:
        """Physical page ids in logical order (read-only view)."""
        view = self._maps[head][: self._lens[head]]
        view.flags.writeable = False
        return view

    def physical(self, head: int, logical: int) -> int:
        if not 0 <= logical < self._lens[head]:
            raise LookupError(f"logical page {logical} out of range for head {head}")
        return int(self._maps[head][logical])

    def to_logical(self, head: int, physical_ids: np.ndarray) -> np.ndarray:
        """Map physical ids back to this head's logical indices."""
        out = np.empty(len(physical_ids), dtype=np.int64)
        for i, pid in enumerate(np.asarray(physical_ids).tolist()):
            owner = self._owner.get(pid)
            if owner is None or owner[0] != head:
                raise LookupError(f"physical page {pid} not allocated for head {head}")
            out[i] = owner[1]
        return out


class PagedKvCache:
    """Append-only paged KV storage with cached page statistics."""

    def __init__(self, layout: CacheLayout) -> None:
        self.layout = layout
        self.table = PageTable(layout.num_kv_heads)
        self._page_keys: list[np.ndarray] = []  # pid -> (page_size, head_dim) f32
        self._page_values: list[np.ndarray] = []
        self._page_rows: list[int] = []
        h = layout.num_kv_heads
        self._seq_len = [0] * h
        # Per-head stats in logical page order, contiguous for the scorer.
        self._means = [np.empty((4, layout.head_dim), dtype=np.float32) for _ in range(h)]
        self._stds = [np.empty(4, dtype=np.float32) for _ in range(h)]
        self._counts = [np.empty(4, dtype=np.int64) for _ in range(h)]

    # ------------------------------------------------------------------
    # Shape queries

    def seq_len(self, head: int) -> int:
        return self._seq_len[head]

    def num_pages(self, head: int) -> int:
        return self.table.num_pages(head)

    def total_allocated_pages(self) -> int:
        return len(self._page_keys) - len(self.table.free_list)

    # ------------------------------------------------------------------
    # Appends

    def _alloc_page(self, head: int) -> int:
        if self.table.free_list:
            pid = self.table.free_list.pop()
        elif len(self._page_keys) < self.layout.max_pages:
            pid = len(self._page_keys)
            shape = (self.layout.page_size, self.layout.head_dim)
            self._page_keys.append(np.zeros(shape, dtype=np.float32))
            self._page_values.append(np.zeros(shape, dtype=np.float32))
            self._page_rows.append(0)
        else:
            raise CapacityError(
                f"page pool exhausted ({self.layout.max_pages} pages)"
            )
        self._page_rows[pid] = 0
        self.table.append_page(head, pid)
        n = self.table.num_pages(head)
        if n > self._stds[head].shape[0]:
            for name in ("_means", "_stds", "_counts"):
                buf = getattr(self, name)[head]
                grown = np.empty((2 * n,) + buf.shape[1:], dtype=buf.dtype)
                grown[: n - 1] = buf[: n - 1]
                getattr(self, name)[head] = grown
        return pid

    def _refresh_stats(self, head: int, logical: int, pid: int) -> None:
        rows = self._page_rows[pid]
        stats = compute_page_stats(self._page_keys[pid][:rows])
        self._means[head][logical] = stats.mean
        self._stds[head][logical] = stats.std
        self._counts[head][logical] = stats.count

    def append(self, head: int, key: np.ndarray, value: np.ndarray) -> int:
        """Append one token's key/value row; returns its logical position.

        Lands in the head's trailing page, allocating a fresh page when that
        one is full, and recomputes the touched page's stats exactly.
        """
        key = np.asarray(key, dtype=np.float32)
        value = np.asarray(value, dtype=np.float32)
        if key.shape != (self.layout.head_dim,) or value.shape != key.shape:
            raise ValueError("key/value must be (head_dim,) vectors")
        n_pages = self.table.num_pages(head)
        if n_pages == 0 or self._page_rows[self.table.physical(head, n_pages - 1)] == self.layout.page_size:
            pid = self._alloc_page(head)
            n_pages = self.table.num_pages(head)
        else:
            pid = self.table.physical(head, n_pages - 1)
        row = self._page_rows[pid]
        self._page_keys[pid][row] = key
        self._page_values[pid][row] = value
        self._page_rows[pid] = row + 1
        self._refresh_stats(head, n_pages - 1, pid)
        pos = self._seq_len[head]
        self._seq_len[head] = pos + 1
        return pos

    def extend(self, head: int, keys: np.ndarray, values: np.ndarray) -> None:
        """Bulk append; same result as appending row by row."""
        keys = np.asarray(keys, dtype=np.float32)
        values = np.asarray(values, dtype=np.float32)
        if keys.ndim != 2 or keys.shape != values.shape or keys.shape[1] != self.layout.head_dim:
            raise ValueError("keys/values must be matching (n, head_dim) arrays")
        size = self.layout.page_size
        done = 0
        n = keys.shape[0]
        while done < n:
            n_pages = self.table.num_pages(head)
            if n_pages == 0 or self._page_rows[self.table.physical(head, n_pages - 1)] == size:
                pid = self._alloc_page(head)
                n_pages = self.table.num_pages(head)
            else:
                pid = self.table.physical(head, n_pages - 1)
            row = self._page_rows[pid]
            take = min(size - row, n - done)
            self._page_keys[pid][row : row + take] = keys[done : done + take]
            self._page_values[pid][row : row + take] = values[done : done + take]
            self._page_rows[pid] = row + take
            self._refresh_stats(head, n_pages - 1, pid)
            done += take
        self._seq_len[head] += n

    # ------------------------------------------------------------------
    # Reads

    def page_stats(self, head: int, logical: int) -> PageStats:
        pid = self.table.physical(head, logical)
        return PageStats(
            count=int(self._counts[head][logical]),
            mean=self._means[head][logical].copy(),
            std=float(self._stds[head][logical]),
        )

    def stats_arrays(self, head: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Contiguous (means, stds, counts) in logical page order."""
        p = self.table.num_pages(head)
        return (
            np.ascontiguousarray(self._means[head][:p]),
            np.ascontiguousarray(self._stds[head][:p]),
            self._counts[head][:p].copy(),
        )

    def page_rows(self, pid: int) -> int:
        return self._page_rows[pid]

    def page_keys(self, head: int, logical: int) -> np.ndarray:
        pid = self.table.physical(head, logical)
        return self._page_keys[pid][: self._page_rows[pid]]

    def page_values(self, head: int, logical: int) -> np.ndarray:
        pid = self.table.physical(head, logical)
        return self._page_values[pid][: self._page_rows[pid]]

    def gather_pages(self, head: int, physical_ids) -> tuple[np.ndarray, np.ndarray]:
        """Concatenate the rows of the given pages, in the given order.

        Every id must be allocated for this head; a partial page contributes
        only the rows it holds.
        """
        self.table.to_logical(head, physical_ids)  # ownership check
        ids = np.asarray(physical_ids, dtype=np.int64).tolist()
        ks = [self._page_keys[pid][: self._page_rows[pid]] for pid in ids]
        vs = [self._page_values[pid][: self._page_rows[pid]] for pid in ids]
        dim = self.layout.head_dim
        if not ids:
            empty = np.empty((0, dim), dtype=np.float32)
            return empty, empty.copy()
        return np.concatenate(ks, axis=0), np.concatenate(vs, axis=0)

    def full_kv(self, head: int) -> tuple[np.ndarray, np.ndarray]:
        """All rows of one head in logical order."""
        return self.gather_pages(head, self.table.mapping(head))

    # ------------------------------------------------------------------
    # Snapshots

    def save(self, path: str) -> None:
        """Write the cache as a binary snapshot.

        Layout: magic ``UNQK``, then version, num_kv_heads, head_dim,
        page_size, seq_len as little-endian u32, then per head the keys and
        values as row-major little-endian f32. All heads must hold the same
        number of tokens.
        """
        lengths = {self.seq_len(h) for h in range(self.layout.num_kv_heads)}
        if len(lengths) != 1:
            raise ValueError("snapshot requires equal seq_len across heads")
        n = lengths.pop()
        with open(path, "wb") as f:
            f.write(SNAPSHOT_MAGIC)
            f.write(
                struct.pack(
                    "<IIIII",
                    SNAPSHOT_VERSION,
                    self.layout.num_kv_heads,
                    self.layout.head_dim,
                    self.layout.page_size,
                    n,
                )
            )
            for head in range(self.layout.num_kv_heads):
                keys, values = self.full_kv(head)
                f.write(np.ascontiguousarray(keys, dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str, extra_pages: int = 0) -> "PagedKvCache":
        """Rebuild a cache from a snapshot written by :meth:`save`."""
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != SNAPSHOT_MAGIC:
                raise ValueError(f"bad snapshot magic {magic!r}")
            version, heads, dim, size, n = struct.unpack("<IIIII", f.read(20))
            if version != SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            pages_per_head = max(1, -(-n // size))
            layout = CacheLayout(
                num_kv_heads=heads,
                head_dim=dim,
                page_size=size,
                max_pages=heads * pages_per_head + extra_pages,
            )
            cache = cls(layout)
            count = n * dim
            for head in range(heads):
                keys = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(n, dim)
                values = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(n, dim)
                cache.extend(head, keys, values)
        return cache
