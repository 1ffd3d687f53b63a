"""Discrete-event realization of schedules."""
from typing import Dict, Iterable, List, Sequence, Tuple
import heapq
import itertools
import logging

from app.schemas.schedule import Allocation, EventTrace, EventType, Schedule, TraceEvent

logger = logging.getLogger(__name__)


class EventQueue:
    """Min-heap of trace events ordered by (tick, kind, request, invocation)."""

    def __init__(self):
        self._heap: List[Tuple] = []
        self._counter = itertools.count()

    def push(self, event: TraceEvent) -> None:
        heapq.heappush(self._heap, (event.sort_key(), next(self._counter), event))

    def pop(self) -> TraceEvent:
        return heapq.heappop(self._heap)[-1]

    def __len__(self) -> int:
        return len(self._heap)


def _events_for(a: Allocation) -> Iterable[TraceEvent]:
    def event(tick: int, kind: EventType, service_id: str = None) -> TraceEvent:
        return TraceEvent(
            time_tick=tick,
            event_kind=kind,
            request_id=a.request_id,
            invocation_id=a.invocation_id,
            instrument_id=a.instrument_id,
            service_id=service_id or a.service_id,
        )

    if a.start > a.ready:
        yield event(a.ready, EventType.QUEUE_WAIT)
    if a.rerouted:
        # bound instrument, preferred service
        yield event(a.start, EventType.REROUTE, a.preferred_service_id)
    if a.merged_count > 1:
        yield event(a.start, EventType.MERGE)
    yield event(a.start, EventType.START)
    yield event(a.end, EventType.FINISH)


def simulate(s: Schedule) -> EventTrace:
    """Replay a schedule through the event queue; one finish event per allocation."""
    events = EventQueue()
    for allocation in s.allocations:
        for event in _events_for(allocation):
            events.push(event)

    trace: List[TraceEvent] = []
    step_count = 0
    while events:
        event = events.pop()
        if event.event_kind == EventType.FINISH:
            step_count += 1
        trace.append(event)

    logger.debug(f"Simulated {step_count} steps over {s.makespan} ticks")
    return EventTrace(events=trace, step_count=step_count)


def reconstruct(trace: EventTrace) -> List[Tuple[str, int, str, str, int, int]]:
    """Allocation slots recovered by pairing start and finish events."""
    starts: Dict[Tuple[str, int], TraceEvent] = {}
    slots = []
    for event in trace.events:
        key = (event.request_id, event.invocation_id)
        if event.event_kind == EventType.START:
            starts[key] = event
        elif event.event_kind == EventType.FINISH:
            start = starts.pop(key)
            slots.append((event.request_id, event.invocation_id, start.instrument_id,
                          start.service_id, start.time_tick, event.time_tick))
    return sorted(slots, key=lambda s: (s[4], s[0], s[1]))


def offset_trace(trace: EventTrace, ticks: int) -> EventTrace:
    shifted = [e.model_copy(update={"time_tick": e.time_tick + ticks}) for e in trace.events]
    return EventTrace(events=shifted, step_count=trace.step_count)


def concat_traces(traces: Sequence[EventTrace]) -> EventTrace:
    """Merge already-offset traces into one time-ordered trace."""
    events = EventQueue()
    for trace in traces:
        for event in trace.events:
            events.push(event)
    merged = []
    while events:
        merged.append(events.pop())
    return EventTrace(events=merged, step_count=sum(t.step_count for t in traces))


def chain_runs(runs: Sequence[Tuple[Schedule, EventTrace]]) -> Tuple[Schedule, EventTrace]:
    """Lay runs end to end on one clock; each starts when the previous one finished."""
    if not runs:
        raise ValueError("nothing to chain")
    allocations, traces, elapsed = [], [], 0
    for plan, trace in runs:
        allocations.extend(plan.offset(elapsed).allocations)
        traces.append(offset_trace(trace, elapsed))
        elapsed += plan.makespan
    first = runs[0][0]
    plan = Schedule(
        allocations=allocations,
        policy=first.policy,
        makespan=elapsed,
        fallback=any(p.fallback for p, _ in runs),
    )
    return plan, concat_traces(traces)
