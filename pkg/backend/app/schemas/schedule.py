"""Schedules, event traces and utilization reports. Times are integer ticks."""
from enum import Enum
from typing import Dict, List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import settings


def to_minutes(ticks: int) -> float:
    return round(ticks / settings.TICKS_PER_MINUTE, 1)


class Allocation(BaseModel):
    model_config = ConfigDict(frozen=True)

    request_id: str
    invocation_id: int
    instrument_id: str
    service_id: str
    start: int = Field(ge=0)
    end: int
    ready: int = 0
    preferred_service_id: str = ""
    merged_count: int = 1
    submit_tick: int = 0
    program_index: int = 0

    @model_validator(mode="after")
    def positive_length(self) -> "Allocation":
        if self.end <= self.start:
            raise ValueError(f"allocation {self.request_id}#{self.invocation_id} has end <= start")
        return self

    @property
    def rerouted(self) -> bool:
        return bool(self.preferred_service_id) and self.preferred_service_id != self.service_id

    def slot(self) -> Tuple[str, int, str, str, int, int]:
        return (self.request_id, self.invocation_id, self.instrument_id, self.service_id, self.start, self.end)


class Schedule(BaseModel):
    allocations: List[Allocation] = Field(default_factory=list)
    policy: Literal["serial_queue", "dynamic"]
    makespan: int = 0
    # dynamic policy kept the serial plan because it was no longer
    fallback: bool = False

    @property
    def makespan_min(self) -> float:
        return to_minutes(self.makespan)

    def offset(self, ticks: int) -> "Schedule":
        """Same plan shifted later in time (used to chain experiment phases)."""
        shifted = [
            a.model_copy(update={"start": a.start + ticks, "end": a.end + ticks, "ready": a.ready + ticks})
            for a in self.allocations
        ]
        return Schedule(allocations=shifted, policy=self.policy, makespan=self.makespan + ticks,
                        fallback=self.fallback)


class EventType(str, Enum):
    """Event kinds; declaration order is the tie-break order at equal ticks."""
    FINISH = "finish"
    REROUTE = "reroute"
    MERGE = "merge"
    QUEUE_WAIT = "queue_wait"
    START = "start"

    @property
    def order(self) -> int:
        return list(EventType).index(self)


class TraceEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    time_tick: int
    event_kind: EventType
    request_id: str
    invocation_id: int
    instrument_id: str
    service_id: str

    def sort_key(self) -> Tuple[int, int, str, int]:
        return (self.time_tick, self.event_kind.order, self.request_id, self.invocation_id)


class EventTrace(BaseModel):
    events: List[TraceEvent] = Field(default_factory=list)
    step_count: int = 0

    def of_kind(self, kind: EventType) -> List[TraceEvent]:
        return [e for e in self.events if e.event_kind == kind]

    @property
    def instruments_used(self) -> List[str]:
        return sorted({e.instrument_id for e in self.events if e.event_kind == EventType.START})


class UtilizationReport(BaseModel):
    makespan: int
    busy: Dict[str, int]
    ratios: Dict[str, float]
    total_queue_wait: int = 0

    @property
    def makespan_min(self) -> float:
        return to_minutes(self.makespan)
