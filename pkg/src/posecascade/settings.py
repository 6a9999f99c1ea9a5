"""
This module has three purposes:

1. It defines the process-level variables needed to run the tools (worker threads, log level).
   Run-level options (network widths, cascade counts, paths...) live in the ``key = value`` run
   configuration handled by ``posecascade.cli.config`` instead.

2. It can be imported by any module that needs access to these variables. Call
   ``get_settings()`` to get a pydantic object with all the variables obtained from the
   environment (prefix ``POSECASCADE_``) or from a ``.env`` file.

3. It can also be run as a standalone script that prints a ``.env`` example file with default
   values for all the variables.

It uses the *magic* of ``pydantic_settings`` package, so everything is very declarative.
"""

import collections.abc
import functools
import os
import typing

import pydantic
import pydantic_settings


class Settings(pydantic_settings.BaseSettings):
    """All the variables in this class have a default value, so they can be printed into a file to
    be used as a starting ``.env`` file.

    The class has a custom Pydantic serializer that converts all variable names into uppercase
    (with the env prefix), and all values into strings, in all dumping/serialization scenarios.
    """

    threads: int | None = pydantic.Field(default=None, ge=1)
    """Upper bound on worker threads (``POSECASCADE_THREADS``). ``None`` means one per CPU."""

    log_level: str = "INFO"

    # Environment variables take precedence over the values found in the file.
    model_config = pydantic_settings.SettingsConfigDict(
        env_prefix="POSECASCADE_", env_file=[".env"], extra="ignore"
    )

    @pydantic.model_serializer(mode="wrap")
    def serialize_uppercase_var_names(
        self, serializer: collections.abc.Callable[[typing.Any], dict[str, typing.Any]]
    ) -> dict[str, str]:
        original_dict: dict[str, typing.Any] = serializer(self)
        return {
            f"POSECASCADE_{key.upper()}": "" if value is None else str(value)
            for key, value in original_dict.items()
        }

    @property
    def worker_count(self) -> int:
        return self.threads or os.cpu_count() or 1


@functools.lru_cache  # We memoize the result, because every call to Settings() does I/O.
def get_settings() -> Settings:
    return Settings()


def _print_dict_as_lines(data: dict[str, typing.Any]):
    for key, value in data.items():
        print(f"{key}={value}")


def main() -> None:
    _print_dict_as_lines(get_settings().model_dump())


if __name__ == "__main__":
    main()
