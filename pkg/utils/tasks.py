import logging
from concurrent.futures import ThreadPoolExecutor

from django.conf import settings

logger = logging.getLogger(__name__)


def thread_budget(requested=None):
    """Worker count capped by FLOWFORGE_THREADS."""
    cap = getattr(settings, 'FLOWFORGE_THREADS', 1)
    if requested is None:
        return cap
    return max(1, min(int(requested), cap))


def run_parallel(func, items, max_workers=None):
    """
    Apply a function to every item, possibly on a bounded thread pool.

    Results come back in input order whatever the completion order, so any
    reduction done by the caller stays deterministic.

    Args:
        func: Callable taking one item
        items: Iterable of inputs
        max_workers (int, optional): Requested worker count, capped by FLOWFORGE_THREADS

    Returns:
        list: func(item) for every item, in order
    """
    items = list(items)
    workers = thread_budget(max_workers)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    name = getattr(func, '__name__', 'task')
    logger.debug(f"Fanning out {name} over {len(items)} items on {workers} threads")
    try:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix=f"flowforge-{name}") as pool:
            return list(pool.map(func, items))
    except Exception as e:
        logger.error(f"Error in parallel task {name}: {str(e)}", exc_info=True)
        raise
