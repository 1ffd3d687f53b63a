"""Instrument utilization and policy comparison metrics."""
from typing import Dict, Iterable, List, Optional, Tuple
import logging

from app.core.exceptions import ZeroMakespanError
from app.schemas.schedule import EventTrace, EventType, UtilizationReport, to_minutes

logger = logging.getLogger(__name__)


def _union_length(intervals: List[Tuple[int, int]]) -> int:
    total = 0
    current_start, current_end = None, None
    for start, end in sorted(intervals):
        if current_end is None or start > current_end:
            if current_end is not None:
                total += current_end - current_start
            current_start, current_end = start, end
        else:
            current_end = max(current_end, end)
    if current_end is not None:
        total += current_end - current_start
    return total


def busy_intervals(t: EventTrace) -> Dict[str, List[Tuple[int, int]]]:
    starts: Dict[Tuple[str, int], int] = {}
    intervals: Dict[str, List[Tuple[int, int]]] = {}
    for event in t.events:
        key = (event.request_id, event.invocation_id)
        if event.event_kind == EventType.START:
            starts[key] = event.time_tick
        elif event.event_kind == EventType.FINISH:
            intervals.setdefault(event.instrument_id, []).append((starts.pop(key), event.time_tick))
    return intervals


def utilization(
    t: EventTrace,
    makespan: int,
    instruments: Optional[Iterable[str]] = None,
) -> UtilizationReport:
    """
    Busy time over makespan for every instrument.

    Args:
        t: event trace
        makespan: schedule makespan in ticks
        instruments: report these ids too (0.0 when never used)

    Returns:
        UtilizationReport; overlapping work on non-exclusive instruments is counted once
    """
    if makespan <= 0:
        raise ZeroMakespanError()

    intervals = busy_intervals(t)
    ids = sorted(set(intervals) | set(instruments or ()))
    busy = {i: _union_length(intervals.get(i, [])) for i in ids}
    ratios = {i: min(1.0, busy[i] / makespan) for i in ids}

    ready_at: Dict[Tuple[str, int], int] = {}
    total_wait = 0
    for event in t.events:
        key = (event.request_id, event.invocation_id)
        if event.event_kind == EventType.QUEUE_WAIT:
            ready_at[key] = event.time_tick
        elif event.event_kind == EventType.START and key in ready_at:
            total_wait += event.time_tick - ready_at.pop(key)

    return UtilizationReport(makespan=makespan, busy=busy, ratios=ratios, total_queue_wait=total_wait)


def format_utilization(report: UtilizationReport) -> str:
    """Plain-text report, one instrument per line."""
    lines = [
        f"makespan_min: {report.makespan_min:.1f}",
        f"total_queue_wait_min: {to_minutes(report.total_queue_wait):.1f}",
    ]
    for instrument_id, ratio in report.ratios.items():
        lines.append(f"{instrument_id}: busy_min={to_minutes(report.busy[instrument_id]):.1f} ratio={ratio:.4f}")
    return "\n".join(lines) + "\n"
