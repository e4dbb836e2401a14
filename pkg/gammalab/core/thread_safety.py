import functools
import threading
from collections.abc import Callable
from typing import Any, TypeVar

F = TypeVar("F", bound=Callable[..., Any])


def thread_safe(func: F) -> F:
    """Decorator that runs the method under the instance (or class) RLock."""

    @functools.wraps(func)
    def wrapper(self, *args, **kwargs):
        lock = getattr(self, "_lock", None)
        if lock is None:
            if not hasattr(self.__class__, "_lock"):
                self.__class__._lock = threading.RLock()  # noqa: SLF001
            lock = self.__class__._lock  # noqa: SLF001

        with lock:
            return func(self, *args, **kwargs)

    wrapper.thread_safe_wrapped = True
    return wrapper


def _public_methods(cls: type) -> list[str]:
    return [
        method_name
        for method_name in dir(cls)
        if callable(getattr(cls, method_name, None)) and not method_name.startswith("_")
    ]


def auto_thread_safe(thread_safe_methods: list[str] | None = None):
    """Class decorator that serialises the listed methods (all public ones when omitted)."""

    def decorator(cls: type) -> type:
        if not hasattr(cls, "_lock"):
            cls._lock = threading.RLock()

        for method_name in thread_safe_methods or _public_methods(cls):
            original_method = getattr(cls, method_name, None)
            if callable(original_method) and not hasattr(original_method, "thread_safe_wrapped"):
                setattr(cls, method_name, thread_safe(original_method))

        return cls

    return decorator
