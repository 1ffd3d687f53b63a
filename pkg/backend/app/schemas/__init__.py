from app.schemas.instrument import AtomicService, DurationModel, Instrument, ParamSpec, Registry
from app.schemas.procedure import (
    Container,
    Feasible,
    Infeasible,
    MinimizeGoal,
    Objective,
    Procedure,
    ReagentInventory,
    Request,
    ThresholdGoal,
)
from app.schemas.program import Invocation, LintFinding, LintReport, Program
from app.schemas.schedule import Allocation, EventTrace, EventType, Schedule, TraceEvent, UtilizationReport
from app.schemas.optimization import Exhausted, HistoryEntry, Hypothesis, OptimizationState, Outcome
from app.schemas.storage import StorageHeader, StorageReport, Strand, StrandSet
from app.schemas.scenario import ChannelConfig, RequestSpec, ScenarioConfig, StorageConfig, SurfaceConfig

__all__ = [
    "AtomicService", "DurationModel", "Instrument", "ParamSpec", "Registry",
    "Container", "Feasible", "Infeasible", "MinimizeGoal", "Objective", "Procedure",
    "ReagentInventory", "Request", "ThresholdGoal",
    "Invocation", "LintFinding", "LintReport", "Program",
    "Allocation", "EventTrace", "EventType", "Schedule", "TraceEvent", "UtilizationReport",
    "Exhausted", "HistoryEntry", "Hypothesis", "OptimizationState", "Outcome",
    "StorageHeader", "StorageReport", "Strand", "StrandSet",
    "ChannelConfig", "RequestSpec", "ScenarioConfig", "StorageConfig", "SurfaceConfig",
]
