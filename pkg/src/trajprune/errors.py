"""Exception hierarchy shared by every module.

Each error carries a stable machine-readable ``code`` so the CLI can emit
error JSON without string-matching messages.
"""

from __future__ import annotations


class EngineError(Exception):
    code = "engine_error"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ShapeError(EngineError):
    code = "shape_mismatch"


class ParameterError(EngineError):
    code = "bad_parameter"


class MaskError(EngineError):
    code = "mask_mismatch"


class ContainerError(EngineError):
    """Container file problems; ``code`` distinguishes the failure class
    (bad_magic, bad_version, header_invalid, payload_out_of_bounds,
    payload_overlap, non_finite, missing_tensor, dim_mismatch)."""

    code = "container_invalid"


class InfeasibleBudgetError(EngineError):
    code = "infeasible_budget"


class ScheduleError(EngineError):
    code = "budget_unreachable"
