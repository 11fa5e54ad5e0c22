"""Order-preserving fan-out over independent work items."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def chunked(items: Sequence[T], n_chunks: int) -> list[list[T]]:
    n_chunks = max(1, min(n_chunks, len(items)))
    size, extra = divmod(len(items), n_chunks)
    out, start = [], 0
    for i in range(n_chunks):
        stop = start + size + (i < extra)
        out.append(list(items[start:stop]))
        start = stop
    return out


def fan_out(fn: Callable[..., list[R]], items: Sequence[T], workers: int, *args) -> list[R]:
    """Apply ``fn(chunk, *args)`` to contiguous chunks and concatenate the results.

    ``fn`` must be a module-level function returning one result per item.
    Results come back in input order whatever the worker count.
    """
    if workers <= 1 or len(items) <= 1:
        return list(fn(list(items), *args))
    chunks = chunked(items, workers * 4)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(fn, chunks, *[[a] * len(chunks) for a in args])
        return [r for part in parts for r in part]
