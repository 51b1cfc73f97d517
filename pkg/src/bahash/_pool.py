import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV = "BAHASH_WORKERS"


def resolve_workers(workers=None) -> int:
    """Explicit value, else $BAHASH_WORKERS, else 1."""
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def chunk_bounds(n: int, pieces: int):
    pieces = max(1, min(pieces, n))
    edges = [n * k // pieces for k in range(pieces + 1)]
    return [(edges[k], edges[k + 1]) for k in range(pieces)]


def run_parallel(fn, items, workers=None):
    """``[fn(item) for item in items]`` over a thread pool, results in input order.

    The numba kernels release the GIL, so threads give real parallelism.
    """
    workers = resolve_workers(workers)
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
