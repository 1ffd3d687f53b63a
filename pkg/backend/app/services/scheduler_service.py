"""Bind invocations to instruments and order them in time.

All times are integer ticks (tenths of a minute).
"""
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import logging
import queue

from app.config import settings
from app.core.exceptions import UnschedulableError
from app.schemas.instrument import AtomicService, Registry
from app.schemas.program import Invocation, Program
from app.schemas.schedule import Allocation, EventTrace, Schedule
from app.services.consolidation_service import consolidate
from app.services.registry_service import capable_services, equivalents
from app.services.simulation_service import simulate

logger = logging.getLogger(__name__)


def submit_tick(prog: Program) -> int:
    return int(round(prog.submit_time * settings.TICKS_PER_MINUTE))


@dataclass(frozen=True)
class Binding:
    service: AtomicService
    start: int
    duration: int
    preferred: AtomicService

    @property
    def instrument_id(self) -> str:
        return self.service.instrument_id

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def rerouted(self) -> bool:
        return self.service.service_id != self.preferred.service_id


class Router:
    """Caches the candidate services of each (capability, params) pair."""

    def __init__(self, reg: Registry):
        self.reg = reg
        self._options: Dict[Tuple, Tuple[AtomicService, List[AtomicService]]] = {}

    def options(self, inv: Invocation) -> Tuple[AtomicService, List[AtomicService]]:
        key = (inv.capability, tuple(sorted((k, str(v)) for k, v in inv.params.items())))
        if key not in self._options:
            capable = capable_services(self.reg, inv.capability, inv.params)
            if not capable:
                raise UnschedulableError(
                    f"invocation {inv.invocation_id} ({inv.capability}) has no capable instrument"
                )
            preferred = capable[0]
            capable_ids = {svc.service_id for svc in capable}
            alternates = [svc for svc in equivalents(self.reg, preferred.service_id)
                          if svc.service_id in capable_ids]
            self._options[key] = (preferred, alternates)
        return self._options[key]

    def bind(self, inv: Invocation, busy: Mapping[str, int], ready: int) -> Binding:
        preferred, alternates = self.options(inv)
        best = Binding(preferred, max(ready, busy.get(preferred.instrument_id, 0)),
                       preferred.ticks(inv.params), preferred)
        for svc in alternates:
            start = max(ready, busy.get(svc.instrument_id, 0))
            if start < best.start:
                best = Binding(svc, start, svc.ticks(inv.params), preferred)
        return best


def reroute(inv: Invocation, reg: Registry, busy: Mapping[str, int], ready: int = 0) -> Binding:
    """
    Bind an invocation, substituting an equivalent service when it starts earlier.

    Args:
        inv: invocation to bind
        reg: registry
        busy: instrument_id -> tick at which the instrument becomes free
        ready: tick at which the invocation's dependencies are done

    Returns:
        Binding on the preferred (cheapest, then lowest id) service unless an
        equivalent can start strictly earlier
    """
    return Router(reg).bind(inv, busy, ready)


# ==================== List scheduling ====================

def _list_schedule(
    indexed: Sequence[Tuple[int, Program]],
    router: Router,
    start_tick: int = 0,
) -> List[Allocation]:
    """Greedy earliest-start list scheduling over all programs at once."""
    reg = router.reg
    busy: Dict[str, int] = {}
    finished: Dict[Tuple[int, int], int] = {}
    waiting: Dict[Tuple[int, int], int] = {}
    successors: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    ready: Dict[Tuple[int, int], int] = {}
    programs = dict(indexed)
    submits = {k: max(start_tick, submit_tick(p)) for k, p in indexed}

    for k, prog in indexed:
        for inv in prog.invocations:
            router.options(inv)
            waiting[(k, inv.invocation_id)] = len(inv.depends_on)
            for dep in inv.depends_on:
                successors[(k, dep)].append(inv.invocation_id)
            if not inv.depends_on:
                ready[(k, inv.invocation_id)] = submits[k]

    allocations: List[Allocation] = []
    while ready:
        choice = None
        for (k, inv_id), ready_at in ready.items():
            inv = programs[k].invocation(inv_id)
            binding = router.bind(inv, busy, ready_at)
            rank = (binding.start, submits[k], k, inv_id)
            if choice is None or rank < choice[0]:
                choice = (rank, k, inv, binding, ready_at)

        _, k, inv, binding, ready_at = choice
        del ready[(k, inv.invocation_id)]
        if reg.instruments[binding.instrument_id].exclusive:
            busy[binding.instrument_id] = binding.end
        finished[(k, inv.invocation_id)] = binding.end
        allocations.append(Allocation(
            request_id=programs[k].request_id,
            invocation_id=inv.invocation_id,
            instrument_id=binding.instrument_id,
            service_id=binding.service.service_id,
            start=binding.start,
            end=binding.end,
            ready=ready_at,
            preferred_service_id=binding.preferred.service_id,
            merged_count=inv.merged_count,
            submit_tick=submits[k],
            program_index=k,
        ))

        for succ in successors[(k, inv.invocation_id)]:
            waiting[(k, succ)] -= 1
            if waiting[(k, succ)] == 0:
                deps = programs[k].invocation(succ).depends_on
                ready[(k, succ)] = max([submits[k]] + [finished[(k, d)] for d in deps])

    return allocations


def _makespan(allocations: Sequence[Allocation]) -> int:
    return max((a.end for a in allocations), default=0)


def _serial_queue(progs: Sequence[Program], router: Router) -> List[Allocation]:
    """Programs one after another in submission order, each with the whole lab."""
    order = sorted(range(len(progs)), key=lambda k: (submit_tick(progs[k]), k))
    clock = 0
    allocations: List[Allocation] = []
    for k in order:
        start = max(clock, submit_tick(progs[k]))
        planned = _list_schedule([(k, progs[k])], router, start_tick=start)
        allocations.extend(planned)
        clock = max(start, _makespan(planned))
    return allocations


def consolidated_by_task(progs: Sequence[Program], reg: Registry) -> List[Program]:
    """Merge programs that share a task, keeping first-submission order of the tasks."""
    groups: Dict[str, List[Program]] = {}
    for prog in progs:
        groups.setdefault(prog.task, []).append(prog)
    return [consolidate(group, reg) if len(group) > 1 else group[0] for group in groups.values()]


def schedule(
    progs: Sequence[Program],
    reg: Registry,
    policy: str = "dynamic",
    consolidate_tasks: bool = True,
) -> Schedule:
    """
    Plan a set of programs on the lab.

    Args:
        progs: lint-clean programs, in submission order
        reg: registry
        policy: "serial_queue" or "dynamic"
        consolidate_tasks: under "dynamic", merge programs of the same task first

    Returns:
        Schedule; the dynamic policy keeps the serial plan when greedy
        interleaving would finish later
    """
    router = Router(reg)
    for prog in progs:
        for inv in prog.invocations:
            try:
                router.options(inv)
            except UnschedulableError as e:
                raise e.attributed(prog.request_id)

    serial = _serial_queue(progs, router)
    if policy == "serial_queue":
        result = Schedule(allocations=serial, policy="serial_queue", makespan=_makespan(serial))
    elif policy == "dynamic":
        planned = consolidated_by_task(progs, reg) if consolidate_tasks else list(progs)
        dynamic = _list_schedule(list(enumerate(planned)), router)
        if _makespan(serial) < _makespan(dynamic):
            logger.info(f"Dynamic plan ({_makespan(dynamic)}) longer than serial ({_makespan(serial)}); keeping serial")
            result = Schedule(allocations=serial, policy="dynamic", makespan=_makespan(serial), fallback=True)
        else:
            result = Schedule(allocations=dynamic, policy="dynamic", makespan=_makespan(dynamic))
    else:
        raise ValueError(f"unknown policy '{policy}'")

    logger.info(f"{result.policy} schedule: {len(result.allocations)} allocations, "
                f"makespan {result.makespan_min} min")
    return result


# ==================== Engine ====================

class LabEngine:
    """Request intake plus planning.

    Producers may call `submit` from any thread; `run` drains the intake
    between planning rounds.
    """

    def __init__(self, reg: Registry, policy: str = "dynamic", consolidate_tasks: bool = True):
        self.reg = reg
        self.policy = policy
        self.consolidate_tasks = consolidate_tasks
        self._intake: "queue.SimpleQueue[Program]" = queue.SimpleQueue()

    def submit(self, prog: Program) -> None:
        self._intake.put(prog)

    def _drain(self) -> List[Program]:
        programs = []
        while True:
            try:
                programs.append(self._intake.get_nowait())
            except queue.Empty:
                return programs

    def run(self, policy: Optional[str] = None) -> Tuple[Schedule, EventTrace]:
        programs = self._drain()
        plan = schedule(programs, self.reg, policy or self.policy, self.consolidate_tasks)
        return plan, simulate(plan)
