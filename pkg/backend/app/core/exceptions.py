"""Error hierarchy for the lab engine.

Infeasibility, proposer exhaustion and lint findings are returned as values;
everything here signals a contract violation or an unusable input.
"""
from typing import Optional


class LabError(Exception):
    """Base class for all engine errors."""

    def __init__(self, message: str, request_id: Optional[str] = None):
        super().__init__(message)
        self.request_id = request_id

    def attributed(self, request_id: str) -> "LabError":
        """Attach the request that triggered this error (first one wins)."""
        if self.request_id is None:
            self.request_id = request_id
        return self

    def __str__(self) -> str:
        message = super().__str__()
        if self.request_id:
            return f"[{self.request_id}] {message}"
        return message


# ==================== Registry ====================

class RegistryError(LabError):
    pass


class RegistryParseError(RegistryError):
    pass


class DuplicateIdError(RegistryError):
    def __init__(self, kind: str, identifier: str):
        super().__init__(f"duplicate {kind} id: {identifier}")
        self.kind = kind
        self.identifier = identifier


class EmptyRegistryError(RegistryError):
    def __init__(self):
        super().__init__("registry declares no instruments")


class UnknownServiceError(RegistryError):
    def __init__(self, service_id: str):
        super().__init__(f"unknown service: {service_id}")
        self.service_id = service_id


# ==================== Procedures & reagents ====================

class ProcedureError(LabError):
    pass


class RequestParseError(ProcedureError):
    pass


class UnknownTaskError(ProcedureError):
    def __init__(self, task: str):
        super().__init__(f"no template registered for task '{task}'")
        self.task = task


class InvalidProcedureError(ProcedureError):
    pass


class InsufficientReagentError(ProcedureError):
    def __init__(self, reagent: str, needed: float, available: float):
        super().__init__(
            f"insufficient {reagent}: need {needed:g}, have {available:g}"
        )
        self.reagent = reagent
        self.needed = needed
        self.available = available


# ==================== Compilation ====================

class CompileError(LabError):
    pass


class NoCapableInstrumentError(CompileError):
    def __init__(self, step: str, tag: str):
        super().__init__(f"no service carries '{tag}' (needed by {step})")
        self.step = step
        self.tag = tag


class ParamOutOfRangeError(CompileError):
    def __init__(self, step: str, param: str):
        super().__init__(f"parameter '{param}' of {step} is outside every capable service's range")
        self.step = step
        self.param = param


# ==================== Scheduling ====================

class SchedulingError(LabError):
    pass


class IncompatibleProgramsError(SchedulingError):
    pass


class UnschedulableError(SchedulingError):
    pass


class ZeroMakespanError(SchedulingError):
    def __init__(self):
        super().__init__("utilization needs a positive makespan")


# ==================== Optimization ====================

class OptimizationError(LabError):
    pass


class InfeasibleAllCandidatesError(OptimizationError):
    def __init__(self, task: str, missing: Optional[dict] = None):
        super().__init__(f"reagent screening rejected every candidate for '{task}'")
        self.task = task
        self.missing = missing or {}


# ==================== Storage ====================

class StorageError(LabError):
    pass


class PayloadTooLargeError(StorageError):
    def __init__(self, strands: int, index_nt: int):
        super().__init__(
            f"{strands} strands exceed the {index_nt}-nt index field capacity ({4 ** index_nt})"
        )


class UnrecoverableStrandError(StorageError):
    def __init__(self, index: int):
        super().__init__(f"no read cluster matches strand index {index}")
        self.index = index


# ==================== Scenarios ====================

class ScenarioError(LabError):
    pass
