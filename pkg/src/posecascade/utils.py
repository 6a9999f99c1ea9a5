import collections.abc
import concurrent.futures
import enum
import typing

import posecascade.settings


class CustomError(Exception):
    """Root of every error raised on purpose by the package."""

    def __init__(self, message: str):
        super().__init__(message)


class CodedError(CustomError):
    """An error that carries one of the ``str`` enum codes declared next to each module's domain.

    The enum value is the human-readable message; ``detail`` adds the specifics (a path, a shape).
    """

    def __init__(self, code: enum.Enum, detail: str | None = None):
        self.code = code
        self.detail = detail
        message = str(code.value) if detail is None else f"{code.value}: {detail}"
        super().__init__(message)


T = typing.TypeVar("T")
R = typing.TypeVar("R")


def parallel_map(
    func: collections.abc.Callable[[T], R], items: collections.abc.Iterable[T]
) -> list[R]:
    """Map ``func`` over ``items`` on a thread pool capped by ``POSECASCADE_THREADS``.

    Results come back in input order, so callers that derive seeds from item positions get the
    same output whatever the scheduling.
    """
    workers = posecascade.settings.get_settings().worker_count
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))
