from concurrent.futures import ThreadPoolExecutor


def map_ordered(fn, items, threads=1):
    """Apply fn to items, optionally on a thread pool, preserving item order.

    Each call must be pure given its item (all seeding derived from the item),
    so results are identical regardless of scheduling.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
