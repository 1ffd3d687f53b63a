"""DNA data storage workload: write (synthesis) and read (sequencing) through the engine."""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import logging

from sqlalchemy.orm import Session

from app.agents.executor_agent import ExecutorAgent
from app.agents.program_agent import ProgramAgent
from app.agents.reagent_agent import ReagentAgent
from app.core.exceptions import ProcedureError, UnknownTaskError
from app.schemas.procedure import Procedure, SynthesisCycleStep
from app.schemas.program import Program
from app.schemas.schedule import EventTrace, Schedule, to_minutes
from app.schemas.storage import StorageReport, StrandSet
from app.services.lab_stack import LabStack
from app.services.simulation_service import chain_runs
from app.services.storage_codec import decode_with_agreement, encode
from app.services.template_service import template_lookup

logger = logging.getLogger(__name__)


def with_sequence(template: Procedure, sequence: str, procedure_id: str) -> Procedure:
    """
    Expand a synthesis template to one cycle per base of `sequence`.

    The template's first SynthesisCycle step is the prototype for every
    cycle; steps before the first cycle and after the last one are kept.
    """
    positions = [i for i, step in enumerate(template.steps) if isinstance(step, SynthesisCycleStep)]
    if not positions:
        raise ProcedureError(f"template {template.procedure_id} has no synthesis cycle to expand")
    prototype = template.steps[positions[0]]
    cycles = tuple(prototype.model_copy(update={"base": base}) for base in sequence)
    steps = template.steps[:positions[0]] + cycles + template.steps[positions[-1] + 1:]
    return template.model_copy(update={"steps": steps, "procedure_id": procedure_id})


@dataclass
class StorageRun:
    """Everything one archive round trip produced."""
    strand_set: StrandSet
    schedule: Schedule
    trace: EventTrace
    report: StorageReport
    reads: Tuple[str, ...] = ()


class StorageService:
    """Two-phase archive runs: write phase, then read phase scheduled after it."""

    def __init__(self, stack: LabStack, db: Optional[Session] = None):
        self.stack = stack
        storage = stack.config.storage
        self.write_task = storage.write_task if storage else "storage_write"
        self.read_task = storage.read_task if storage else "storage_read"
        self.payload_nt = storage.payload_nt if storage else None
        self.index_nt = storage.index_nt if storage else None
        self.reagent_agent = ReagentAgent(stack.inventory, db)
        self.program_agent = ProgramAgent(stack.registry, db=db)
        self.executor = ExecutorAgent(stack.registry, stack.lab, stack.config.policy, db)

    def _template(self, task: str) -> Procedure:
        templates = template_lookup(self.stack.kb, task)
        if not templates:
            raise UnknownTaskError(task)
        return templates[0]

    def write_programs(self, strand_set: StrandSet, request_id: str) -> List[Program]:
        template = self._template(self.write_task)
        batch = [
            (with_sequence(template, strand.sequence, f"{template.procedure_id}-s{strand.index}"),
             [f"{request_id}/w{strand.index}"])
            for strand in strand_set.strands
        ]
        self.reagent_agent.reserve_batch(batch)
        return [
            self.program_agent.build(procedure, rid, slot=slot)
            for slot, (procedure, [rid]) in enumerate(batch)
        ]

    def write_phase(self, data: bytes, request_id: str, seed: int) -> Tuple[StrandSet, Schedule, EventTrace]:
        """Encode `data` and synthesize one strand per program, consolidated by the scheduler."""
        strand_set = encode(data, self.payload_nt, self.index_nt)
        programs = self.write_programs(strand_set, request_id)
        if not programs:
            return strand_set, Schedule(policy=self.executor.policy), EventTrace()
        plan, trace, _ = self.executor.execute_programs(programs, seed)
        logger.info(f"Write phase of {request_id}: {len(programs)} strands in {plan.makespan_min} min")
        return strand_set, plan, trace

    def read_phase(
        self, sequences: Sequence[str], request_id: str, seed: int
    ) -> Tuple[Tuple[str, ...], Schedule, EventTrace]:
        """Library prep plus sequencing of the pooled strands."""
        template = self._template(self.read_task)
        rid = f"{request_id}/read"
        self.reagent_agent.reserve(template, [rid])
        program = self.program_agent.build(template, rid)
        plan, trace, outcomes = self.executor.execute_programs([program], seed, strands=sequences)
        reads = outcomes[0].reads or ()
        logger.info(f"Read phase of {request_id}: {len(reads)} reads in {plan.makespan_min} min")
        return reads, plan, trace

    def roundtrip(self, data: bytes, seed: int, request_id: str = "store") -> StorageRun:
        strand_set, write_plan, write_trace = self.write_phase(data, request_id, seed)
        reads, read_plan, read_trace = self.read_phase(strand_set.sequences, request_id, seed)
        plan, trace = chain_runs([(write_plan, write_trace), (read_plan, read_trace)])

        recovered, agreement = decode_with_agreement(reads, strand_set.header)
        report = StorageReport(
            recovered=recovered,
            agreement=agreement,
            step_count=trace.step_count,
            instruments_used=len(trace.instruments_used),
            wall_clock_min=to_minutes(plan.makespan),
            write_makespan_min=write_plan.makespan_min,
            read_makespan_min=read_plan.makespan_min,
        )
        if recovered != data:
            logger.warning(f"{request_id}: recovered payload differs from input")
        return StorageRun(strand_set=strand_set, schedule=plan, trace=trace, report=report, reads=tuple(reads))


def storage_roundtrip(data: bytes, stack: LabStack, seed: int, request_id: str = "store") -> StorageReport:
    """Encode, synthesize, sequence and decode `data` on the full engine."""
    return StorageService(stack).roundtrip(data, seed, request_id).report
