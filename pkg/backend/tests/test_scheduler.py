"""Routing, scheduling policies, event traces and utilization."""
from collections import defaultdict
from typing import Dict, List, Sequence
import threading

import numpy as np
import pytest

from app.agents.executor_agent import ExecutorAgent
from app.core.exceptions import SchedulingError, UnschedulableError, ZeroMakespanError
from app.schemas.instrument import AtomicService, DurationModel, Instrument, ParamSpec, Registry
from app.schemas.program import Invocation, Program
from app.schemas.schedule import EventTrace, EventType, Schedule
from app.services.metrics_service import format_utilization, utilization
from app.services.registry_service import build_registry
from app.services.scheduler_service import LabEngine, consolidated_by_task, reroute, schedule
from app.services.simulation_service import chain_runs, reconstruct, simulate

HOLD = Invocation(invocation_id=0, capability="thermal.hold", params={"temp": 39, "duration": 20})


@pytest.fixture
def multiuser(template, build_programs) -> List[Program]:
    return build_programs(
        [template("polya_tailing"), template("library_prep"), template("nucleic_acid_test")],
        ["polya", "libprep", "nat"],
    )


@pytest.fixture
def fanout(kb, build_programs) -> List[Program]:
    lysis, bw = kb.templates["enzymatic_synthesis"]
    return build_programs([lysis, lysis, bw, bw], ["s/0.0", "s/0.1", "s/1.0", "s/1.1"])


def assert_feasible(plan: Schedule, programs: Sequence[Program], reg: Registry) -> None:
    """Exclusive instruments never overlap, dependencies and submit times hold, nothing is lost."""
    by_request = {p.request_id: p for p in programs}
    finished = {(a.request_id, a.invocation_id): a for a in plan.allocations}
    assert len(finished) == len(plan.allocations)
    assert len(plan.allocations) == sum(len(p.invocations) for p in programs)

    per_instrument: Dict[str, List] = defaultdict(list)
    for a in plan.allocations:
        service = reg.services[a.service_id]
        program = by_request[a.request_id]
        inv = program.invocation(a.invocation_id)
        assert service.instrument_id == a.instrument_id
        assert inv.capability in service.capability_tags
        assert service.accepts(inv.params)
        assert a.start >= round(program.submit_time * 10)
        for dep in inv.depends_on:
            assert finished[(a.request_id, dep)].end <= a.start
        if reg.instruments[a.instrument_id].exclusive:
            per_instrument[a.instrument_id].append((a.start, a.end))

    for intervals in per_instrument.values():
        intervals.sort()
        for (_, end), (start, _) in zip(intervals, intervals[1:]):
            assert end <= start
    assert plan.makespan == max((a.end for a in plan.allocations), default=0)


def planned_programs(
    plan: Schedule, programs: Sequence[Program], reg: Registry, consolidate_tasks: bool
) -> List[Program]:
    """The programs the plan was built from: merged per task unless the serial plan won."""
    if plan.policy == "dynamic" and consolidate_tasks and not plan.fallback:
        return consolidated_by_task(programs, reg)
    return list(programs)


def assert_requests_respected(plan: Schedule, planned: Sequence[Program], originals: Sequence[Program]) -> None:
    """Every submitted invocation runs once, after its dependencies and its submission."""
    by_request = {p.request_id: p for p in planned}
    placed = {}
    for a in plan.allocations:
        for source in by_request[a.request_id].invocation(a.invocation_id).sources:
            assert source not in placed
            placed[source] = a
    for program in originals:
        for inv in program.invocations:
            a = placed[f"{program.request_id}#{inv.invocation_id}"]
            assert a.start >= round(program.submit_time * 10)
            for dep in inv.depends_on:
                assert placed[f"{program.request_id}#{dep}"].end <= a.start


class TestReroute:

    def test_preferred_when_free(self, registry):
        binding = reroute(HOLD, registry, busy={})
        assert binding.service.service_id == "heater.hold_temp"
        assert binding.duration == 205
        assert not binding.rerouted

    def test_equivalent_when_strictly_earlier(self, registry):
        binding = reroute(HOLD, registry, busy={"heater": 100}, ready=10)
        assert binding.service.service_id == "thermocycler.set_temp"
        assert binding.start == 10
        assert binding.duration == 220
        assert binding.preferred.service_id == "heater.hold_temp"
        assert binding.rerouted

    def test_tie_keeps_preferred(self, registry):
        binding = reroute(HOLD, registry, busy={"heater": 50, "thermocycler": 50})
        assert binding.service.service_id == "heater.hold_temp"
        assert binding.start == 50

    def test_out_of_range_equivalent_not_used(self, registry):
        hot = HOLD.model_copy(update={"params": {"temp": 100, "duration": 5}})
        binding = reroute(hot, registry, busy={"heater": 500})
        assert binding.service.service_id == "heater.hold_temp"
        assert binding.start == 500

    def test_no_capable_service(self, registry):
        with pytest.raises(UnschedulableError):
            reroute(Invocation(invocation_id=0, capability="optical.absorbance"), registry, busy={})


class TestPolicies:

    def test_serial_queue_sums_programs(self, multiuser, registry):
        plan = schedule(multiuser, registry, "serial_queue")
        assert plan.makespan == 429 + 606 + 253
        assert plan.policy == "serial_queue"
        assert not any(a.rerouted for a in plan.allocations)
        assert_feasible(plan, multiuser, registry)

    def test_dynamic_interleaves_and_reroutes(self, multiuser, registry):
        serial = schedule(multiuser, registry, "serial_queue")
        plan = schedule(multiuser, registry, "dynamic")
        assert_feasible(plan, multiuser, registry)
        assert not plan.fallback
        assert plan.makespan == 655
        assert plan.makespan <= 0.85 * serial.makespan

        rerouted = [a for a in plan.allocations if a.rerouted]
        assert [(a.request_id, a.instrument_id, a.start) for a in rerouted] == [("libprep", "thermocycler", 30)]
        assert rerouted[0].preferred_service_id == "heater.hold_temp"

    def test_dynamic_raises_thermal_utilization(self, multiuser, registry):
        reports = {}
        for policy in ("serial_queue", "dynamic"):
            plan = schedule(multiuser, registry, policy)
            reports[policy] = utilization(simulate(plan), plan.makespan, registry.instruments)
        serial, dynamic = reports["serial_queue"], reports["dynamic"]
        assert serial.busy["heater"] == 920
        assert dynamic.busy["heater"] == 615
        assert dynamic.busy["thermocycler"] == 570
        for instrument in ("heater", "thermocycler"):
            assert dynamic.ratios[instrument] >= serial.ratios[instrument]
        assert dynamic.ratios["thermocycler"] > serial.ratios["thermocycler"]

    def test_fanout_consolidation_speedup(self, fanout, registry):
        serial = schedule(fanout, registry, "serial_queue")
        plan = schedule(fanout, registry, "dynamic")
        assert serial.makespan == 4 * (17 + 8 * 338)
        assert plan.makespan == 17 + 8 * 398
        assert serial.makespan / plan.makespan >= 3.0
        assert any(a.merged_count > 1 for a in plan.allocations)
        assert {a.request_id for a in plan.allocations} == {"s/0.0+s/0.1+s/1.0+s/1.1"}

    def test_dynamic_without_consolidation(self, fanout, registry):
        plan = schedule(fanout, registry, "dynamic", consolidate_tasks=False)
        assert_feasible(plan, fanout, registry)
        assert plan.makespan <= schedule(fanout, registry, "serial_queue").makespan

    def test_submit_times_respected(self, template, build_programs, registry):
        early, late = build_programs([template("polya_tailing"), template("nucleic_acid_test")], ["e", "l"])
        late = late.model_copy(update={"submit_time": 100.0})
        for policy in ("serial_queue", "dynamic"):
            plan = schedule([early, late], registry, policy)
            assert_feasible(plan, [early, late], registry)
            assert min(a.start for a in plan.allocations if a.request_id == "l") >= 1000

    def test_consolidated_batch_waits_for_last_submission(self, template, build_programs, registry):
        early, late = build_programs([template("nucleic_acid_test")] * 2, ["e", "l"])
        late = late.model_copy(update={"submit_time": 10.0})
        plan = schedule([early, late], registry, "dynamic")
        planned = planned_programs(plan, [early, late], registry, consolidate_tasks=True)
        assert_feasible(plan, planned, registry)
        assert_requests_respected(plan, planned, [early, late])
        if not plan.fallback:
            assert any(a.merged_count > 1 for a in plan.allocations)
            assert min(a.start for a in plan.allocations) >= 100

    def test_unschedulable_attributed(self, registry):
        program = Program(program_id="x", request_id="x", invocations=(
            Invocation(invocation_id=0, capability="optical.absorbance"),
        ))
        with pytest.raises(UnschedulableError) as exc:
            schedule([program], registry)
        assert exc.value.request_id == "x"

    def test_unknown_policy(self, multiuser, registry):
        with pytest.raises(ValueError):
            schedule(multiuser, registry, "round_robin")

    def test_empty_batch(self, registry):
        plan = schedule([], registry)
        assert plan.makespan == 0
        assert plan.allocations == []


class TestLabEngine:

    def test_threaded_submission(self, template, build_programs, registry):
        programs = build_programs([template("nucleic_acid_test")] * 12, [f"r{i}" for i in range(12)])
        engine = LabEngine(registry, consolidate_tasks=False)
        threads = [
            threading.Thread(target=lambda chunk=programs[i::4]: [engine.submit(p) for p in chunk])
            for i in range(4)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        plan, trace = engine.run()
        assert len(plan.allocations) == sum(len(p.invocations) for p in programs)
        assert trace.step_count == len(plan.allocations)
        # intake is drained
        empty_plan, _ = engine.run()
        assert empty_plan.allocations == []


class TestTrace:

    def test_event_order(self, multiuser, registry):
        trace = simulate(schedule(multiuser, registry, "dynamic"))
        keys = [e.sort_key() for e in trace.events]
        assert keys == sorted(keys)
        assert trace.step_count == len(trace.of_kind(EventType.FINISH))
        assert len(trace.of_kind(EventType.REROUTE)) == 1
        reroute_event = trace.of_kind(EventType.REROUTE)[0]
        assert (reroute_event.instrument_id, reroute_event.service_id) == ("thermocycler", "heater.hold_temp")

    def test_finish_before_start_at_same_tick(self, multiuser, registry):
        trace = simulate(schedule(multiuser, registry, "serial_queue"))
        by_tick = defaultdict(list)
        for e in trace.events:
            by_tick[e.time_tick].append(e.event_kind)
        for kinds in by_tick.values():
            if EventType.FINISH in kinds and EventType.START in kinds:
                assert max(i for i, k in enumerate(kinds) if k == EventType.FINISH) < \
                    min(i for i, k in enumerate(kinds) if k == EventType.START)

    def test_reconstruct_recovers_allocations(self, fanout, registry):
        plan = schedule(fanout, registry, "dynamic")
        trace = simulate(plan)
        assert reconstruct(trace) == sorted((a.slot() for a in plan.allocations), key=lambda s: (s[4], s[0], s[1]))
        assert len(trace.of_kind(EventType.MERGE)) == sum(1 for a in plan.allocations if a.merged_count > 1)

    def test_executor_accepts_matching_trace(self, make_stack, multiuser, registry):
        stack = make_stack("multiuser")
        executor = ExecutorAgent(stack.registry, stack.lab)
        plan = schedule(multiuser, registry, "dynamic")
        executor.validate(plan, simulate(plan))

    def test_executor_rejects_shifted_finish(self, make_stack, multiuser, registry):
        stack = make_stack("multiuser")
        executor = ExecutorAgent(stack.registry, stack.lab)
        plan = schedule(multiuser, registry, "dynamic")
        events = list(simulate(plan).events)
        index = next(i for i, e in enumerate(events) if e.event_kind == EventType.FINISH)
        events[index] = events[index].model_copy(update={"time_tick": events[index].time_tick + 1})
        with pytest.raises(SchedulingError, match="disagrees with the plan"):
            executor.validate(plan, EventTrace(events=events))

    def test_executor_rejects_finish_before_start(self, make_stack, multiuser, registry):
        stack = make_stack("multiuser")
        executor = ExecutorAgent(stack.registry, stack.lab)
        plan = schedule(multiuser, registry, "dynamic")
        events = list(simulate(plan).events)
        index = next(i for i, e in enumerate(events) if e.event_kind == EventType.FINISH)
        events.insert(0, events.pop(index))
        with pytest.raises(SchedulingError, match="before starting"):
            executor.validate(plan, EventTrace(events=events))

    def test_queue_wait_recorded(self, multiuser, registry):
        plan = schedule(multiuser, registry, "dynamic")
        waits = simulate(plan).of_kind(EventType.QUEUE_WAIT)
        assert len(waits) == sum(1 for a in plan.allocations if a.start > a.ready)

    def test_chain_runs_offsets_second_run(self, multiuser, registry):
        first = schedule(multiuser[:1], registry, "serial_queue")
        second = schedule(multiuser[1:2], registry, "serial_queue")
        plan, trace = chain_runs([(first, simulate(first)), (second, simulate(second))])
        assert plan.makespan == first.makespan + second.makespan
        assert trace.step_count == len(plan.allocations)
        assert min(a.start for a in plan.allocations if a.request_id == "libprep") == first.makespan
        with pytest.raises(ValueError):
            chain_runs([])


class TestUtilization:

    def test_unused_instruments_reported(self, multiuser, registry):
        plan = schedule(multiuser, registry, "dynamic")
        report = utilization(simulate(plan), plan.makespan, registry.instruments)
        assert set(report.ratios) == set(registry.instruments)
        assert report.ratios["sequencer"] == 0.0
        assert all(0.0 <= r <= 1.0 for r in report.ratios.values())
        assert report.total_queue_wait > 0

    def test_zero_makespan(self):
        with pytest.raises(ZeroMakespanError):
            utilization(EventTrace(), 0)

    def test_text_report(self, multiuser, registry):
        plan = schedule(multiuser, registry, "serial_queue")
        text = format_utilization(utilization(simulate(plan), plan.makespan))
        assert text.startswith("makespan_min: 128.8\n")
        assert "heater: busy_min=92.0 ratio=0.7143" in text


# ==================== Randomized workloads ====================

def _machine_registry(count: int) -> Registry:
    """One exclusive machine per capability; duration is `units` minutes."""
    return build_registry(
        Instrument(
            instrument_id=f"m{i}",
            kind="machine",
            services=(AtomicService(
                service_id=f"m{i}.run",
                instrument_id=f"m{i}",
                name="run",
                params_schema=(ParamSpec(name="units", type="count", range=(1, 50)),),
                capability_tags=frozenset({f"cap.m{i}"}),
                duration_model=DurationModel(base_min=0.0, per_unit_min=1.0, quantity="units"),
            ),),
        )
        for i in range(count)
    )


def _chain_program(k: int, ops) -> Program:
    return Program(
        program_id=f"p{k}",
        request_id=f"p{k}",
        task=f"t{k}",
        invocations=tuple(
            Invocation(invocation_id=i, capability=f"cap.m{machine}", params={"units": units},
                       depends_on=(i - 1,) if i else (), sources=(f"p{k}#{i}",))
            for i, (machine, units) in enumerate(ops)
        ),
    )


def _optimal_makespan(jobs) -> int:
    """Best semi-active schedule over every interleaving of the job chains (in minutes)."""
    best = [sum(u for job in jobs for _, u in job)]

    def search(next_op, machine_free, job_free, elapsed):
        if elapsed >= best[0]:
            return
        if all(n == len(job) for n, job in zip(next_op, jobs)):
            best[0] = elapsed
            return
        for j, job in enumerate(jobs):
            if next_op[j] == len(job):
                continue
            machine, units = job[next_op[j]]
            start = max(machine_free.get(machine, 0), job_free[j])
            end = start + units
            search(
                next_op[:j] + (next_op[j] + 1,) + next_op[j + 1:],
                {**machine_free, machine: end},
                job_free[:j] + (end,) + job_free[j + 1:],
                max(elapsed, end),
            )

    search(tuple(0 for _ in jobs), {}, tuple(0 for _ in jobs), 0)
    return best[0]


@pytest.mark.parametrize("consolidate_tasks", [False, True])
def test_greedy_within_twice_optimal(consolidate_tasks):
    rng = np.random.default_rng(2024)
    reg = _machine_registry(3)
    for _ in range(150):
        jobs = [
            [(int(rng.integers(0, 3)), int(rng.integers(1, 10))) for _ in range(int(rng.integers(1, 3)))]
            for _ in range(int(rng.integers(2, 5)))
        ]
        programs = [_chain_program(k, ops) for k, ops in enumerate(jobs)]
        plan = schedule(programs, reg, "dynamic", consolidate_tasks=consolidate_tasks)
        planned = planned_programs(plan, programs, reg, consolidate_tasks)
        assert_feasible(plan, planned, reg)
        assert_requests_respected(plan, planned, programs)
        assert plan.makespan <= 2 * _optimal_makespan(jobs) * 10


PALETTE = [
    ("liquid.transfer", {"reagent": "mix", "volume": 20}),
    ("liquid.mix", {"volume": 40}),
    ("mechanical.cap", {"action": "cap"}),
    ("mechanical.move", {"from_zone": "bench", "to_zone": "reagents"}),
    ("thermal.hold", {"temp": 37, "duration": 5}),
    ("thermal.hold", {"temp": 10, "duration": 3}),
    ("thermal.hold", {"temp": 95, "duration": 1}),
    ("thermal.cycle", {"cycles": 3}),
    ("magnetic.wash", {"buffer": "bw", "repeats": 1}),
    ("optical.fluorescence", {}),
]


def _random_program(k: int, rng: np.random.Generator) -> Program:
    invocations = []
    for i in range(int(rng.integers(1, 7))):
        capability, params = PALETTE[int(rng.integers(0, len(PALETTE)))]
        deps = tuple(sorted({int(d) for d in rng.integers(0, i, size=int(rng.integers(0, 3)))})) if i else ()
        invocations.append(Invocation(
            invocation_id=i, capability=capability, params=params, depends_on=deps, sources=(f"w{k}#{i}",),
        ))
    return Program(
        program_id=f"w{k}",
        request_id=f"w{k}",
        task=f"task{int(rng.integers(0, 3))}",
        submit_time=float(rng.integers(0, 4)),
        invocations=tuple(invocations),
    )


@pytest.mark.slow
@pytest.mark.parametrize("consolidate_tasks", [False, True])
def test_random_workloads_are_feasible(registry, consolidate_tasks):
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        programs = [_random_program(k, rng) for k in range(int(rng.integers(1, 5)))]
        serial = schedule(programs, registry, "serial_queue")
        assert_feasible(serial, programs, registry)
        assert_requests_respected(serial, programs, programs)
        plan = schedule(programs, registry, "dynamic", consolidate_tasks=consolidate_tasks)
        planned = planned_programs(plan, programs, registry, consolidate_tasks)
        assert_feasible(plan, planned, registry)
        assert_requests_respected(plan, planned, programs)
        assert plan.makespan <= serial.makespan
        if plan.fallback:
            assert [a.slot() for a in plan.allocations] == [a.slot() for a in serial.allocations]
        trace = simulate(plan)
        assert trace.step_count == len(plan.allocations)
