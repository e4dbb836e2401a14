import threading
from collections.abc import Callable, Hashable
from gammalab.core.settings import get_lab_settings
from typing import Any

# Sparse operators keyed by (domain, operator name)
_operator_cache: dict[tuple[Hashable, str], Any] = {}
_operator_cache_lock = threading.Lock()
_hits = 0
_misses = 0


def get_cached_operator(domain: Hashable, name: str, builder: Callable[[], Any]) -> Any:
    """Return the cached operator for (domain, name), building it on first use.

    The cache is bounded by ``max_cached_operators`` from the lab settings and
    evicts the oldest entry first.

    Args:
        domain: Hashable geometry the operator belongs to
        name: Operator name, e.g. "forward-differences"
        builder: Zero-argument callable producing the operator

    Returns:
        The cached or newly built operator
    """
    global _hits, _misses
    cache_key = (domain, name)

    with _operator_cache_lock:
        if cache_key in _operator_cache:
            _hits += 1
            return _operator_cache[cache_key]

    # Built outside the lock; concurrent callers may build twice
    operator = builder()

    with _operator_cache_lock:
        _misses += 1
        max_operators = get_lab_settings().max_cached_operators
        if max_operators <= 0:
            return operator
        while len(_operator_cache) >= max_operators:
            oldest_key = next(iter(_operator_cache))
            _operator_cache.pop(oldest_key)
        return _operator_cache.setdefault(cache_key, operator)


def clear_operator_cache() -> None:
    """Clear the operator cache to free memory."""
    global _hits, _misses
    with _operator_cache_lock:
        _operator_cache.clear()
        _hits = 0
        _misses = 0


def get_operator_cache_stats() -> dict[str, int]:
    """Get statistics about the operator cache.

    Returns:
        Dict with the number of cached operators, the limit, hits and misses
    """
    with _operator_cache_lock:
        return {
            "cached_operators": len(_operator_cache),
            "max_operators": get_lab_settings().max_cached_operators,
            "hits": _hits,
            "misses": _misses,
        }
