"""Exception types shared across the package."""

from __future__ import annotations


class ParameterError(ValueError):
    """An input parameter is out of its documented range.

    `param` names the offending parameter so front ends can report it.
    """

    def __init__(self, param: str, message: str):
        self.param = param
        super().__init__(f"parameter '{param}': {message}")


class WorkLimitError(RuntimeError):
    """An enumeration would exceed the configured work limit."""

    def __init__(self, required: int, limit: int):
        self.required = required
        self.limit = limit
        super().__init__(
            f"enumeration needs {required} units of work, above the limit {limit}; "
            "raise work_limit to proceed"
        )


class ThinStatisticsWarning(UserWarning):
    """Sample too small for the estimate to be statistically meaningful."""
