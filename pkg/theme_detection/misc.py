import json
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Map preserving input order. Runs inline when `workers` <= 1."""

    if workers <= 1:
        return [func(item) for item in items]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))


def dumps_stable(data: Any, indent: int | None = 2) -> str:
    """JSON with sorted keys and a trailing newline, so equal data gives equal bytes."""

    return json.dumps(data, sort_keys=True, indent=indent, ensure_ascii=False) + "\n"
