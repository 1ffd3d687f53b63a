"""Scenario runs end to end: requests in, artifacts and a ledger row out."""
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
import asyncio
import logging
import uuid

from sqlalchemy.orm import Session

from app.agents.executor_agent import ExecutorAgent
from app.agents.planner_agent import PlannerAgent
from app.agents.program_agent import ProgramAgent, program_request_id
from app.agents.reagent_agent import ReagentAgent
from app.config import settings
from app.core.exceptions import InfeasibleAllCandidatesError, LabError, ScenarioError, StorageError
from app.models.run_record import RunRecord, RunStatus
from app.schemas.optimization import Outcome
from app.schemas.procedure import Request, default_objective
from app.schemas.program import Program
from app.schemas.scenario import RequestSpec
from app.schemas.schedule import EventTrace, EventType, Schedule, UtilizationReport
from app.schemas.storage import StorageHeader, StrandSet, Strand
from app.services.export_service import export_run, read_manifest, write_manifest
from app.services.lab_stack import LabStack
from app.services.metrics_service import utilization
from app.services.optimizer_service import OptimizerService
from app.services.simulation_service import chain_runs
from app.services.storage_codec import decode_with_agreement
from app.services.storage_service import StorageService
from app.services.template_service import archive_optimized
from app.workflows.optimization_graph import OptimizationWorkflow, best_procedure

logger = logging.getLogger(__name__)

STRANDS_FILE = "strands.txt"
RECOVERED_FILE = "recovered.bin"


def to_request(spec: RequestSpec) -> Request:
    return Request(
        request_id=spec.request_id,
        user_id=spec.user_id,
        task=spec.task,
        params=dict(spec.params),
        objective=spec.objective or default_objective(),
        submit_time=spec.submit_time,
        replicates=spec.replicates,
        mode=spec.mode,
    )


def _outcome_summary(outcome: Outcome) -> Dict[str, Any]:
    return {
        "stepwise_yield": outcome.stepwise_yield,
        "time_min": outcome.time,
        "positive": outcome.positive,
    }


@dataclass
class RunResult:
    """In-memory result of one scenario run, before export."""
    run_id: str
    schedule: Schedule
    trace: EventTrace
    report: UtilizationReport
    outcomes: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    optimizations: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    journal: List[Dict[str, Any]] = field(default_factory=list)
    storage: Optional[Dict[str, Any]] = None

    def summary(self) -> Dict[str, Any]:
        return {
            "run_id": self.run_id,
            "policy": self.schedule.policy,
            "fallback": self.schedule.fallback,
            "makespan_min": self.schedule.makespan_min,
            "step_count": self.trace.step_count,
            "reroutes": len(self.trace.of_kind(EventType.REROUTE)),
            "outcomes": self.outcomes,
            "optimizations": self.optimizations,
            "storage": self.storage,
            "utilization": {k: round(v, 4) for k, v in self.report.ratios.items()},
        }


class RunService:
    """Executes every request of a loaded scenario on one simulated lab clock."""

    def __init__(self, stack: LabStack, db: Optional[Session] = None):
        self.stack = stack
        self.db = db
        self.planner = PlannerAgent(stack.kb, db)
        self.reagent_agent = ReagentAgent(stack.inventory, db)
        self.program_agent = ProgramAgent(stack.registry, db=db)
        self.executor = ExecutorAgent(stack.registry, stack.lab, stack.config.policy, db)

    def single_programs(self, requests: List[Request]) -> List[Program]:
        """
        Compile every single-mode request into its programs, one bench slot each.

        Stock is screened for all replicates of a candidate at once. If any
        request fails, every reservation made here is released again.
        """
        programs: List[Program] = []
        reserved: List[str] = []
        for request in requests:
            try:
                feasible, missing = self.reagent_agent.screen(self.planner.candidates(request), request.replicates)
                if not feasible:
                    raise InfeasibleAllCandidatesError(request.task, missing)
                fans_out = len(feasible) > 1 or request.replicates > 1
                batch = [
                    (procedure, [
                        program_request_id(request.request_id, position, replicate, qualified=fans_out)
                        for replicate in range(request.replicates)
                    ])
                    for position, procedure in enumerate(feasible)
                ]
                self.reagent_agent.reserve_batch(batch)
                reserved.extend(rid for _, request_ids in batch for rid in request_ids)
                for procedure, request_ids in batch:
                    for rid in request_ids:
                        programs.append(self.program_agent.build(
                            procedure, rid, request.submit_time, slot=len(programs)
                        ))
            except LabError as e:
                for rid in reserved:
                    self.stack.inventory.release(rid)
                raise e.attributed(request.request_id)
        return programs

    def optimize(self, request: Request, run_id: str) -> Tuple[Dict[str, Any], List[Dict[str, Any]], list]:
        workflow = OptimizationWorkflow(self.stack, db=self.db)
        state = asyncio.run(workflow.run(request, self.stack.config.seed, self.stack.config.budget, run_id))
        opt = state["opt_state"]
        best = best_procedure(state)
        archive_optimized(self.stack.kb, best)
        summary = {
            "procedure_id": best.procedure_id,
            "params": dict(best.params),
            "stepwise_yield": opt.frontier_entry.outcome.stepwise_yield,
            "time_min": opt.frontier_entry.outcome.time,
            "iterations": opt.iteration + 1,
            "decision": state["decision"],
            "halt_reason": opt.halt_reason,
            "objective": OptimizerService(request.objective).summary(),
        }
        journal = [{"request_id": request.request_id, **entry} for entry in state["journal"]]
        return summary, journal, state["runs"]

    def execute(self, run_id: str) -> RunResult:
        config = self.stack.config
        requests = [to_request(spec) for spec in config.requests]
        runs: List[Tuple[Schedule, EventTrace]] = []
        outcomes: Dict[str, Dict[str, Any]] = {}

        single = [r for r in requests if r.mode == "single"]
        if single:
            programs = self.single_programs(single)
            plan, trace, results = self.executor.execute_programs(programs, config.seed)
            runs.append((plan, trace))
            outcomes = {p.request_id: _outcome_summary(o) for p, o in zip(programs, results)}

        optimizations, journal = {}, []
        for request in (r for r in requests if r.mode == "optimize"):
            summary, entries, loop_runs = self.optimize(request, run_id)
            optimizations[request.request_id] = summary
            journal.extend(entries)
            runs.extend(loop_runs)

        storage = None
        if config.storage and config.storage.payload:
            data = config.path(config.storage.payload).read_bytes()
            archive = StorageService(self.stack, self.db).roundtrip(data, config.seed, f"{config.name}-store")
            runs.append((archive.schedule, archive.trace))
            storage = {
                "header": archive.strand_set.header.model_dump(),
                "recovered_exact": archive.report.recovered == data,
                "mean_agreement": round(archive.report.mean_agreement, 4),
                "step_count": archive.report.step_count,
                "instruments_used": archive.report.instruments_used,
                "wall_clock_min": archive.report.wall_clock_min,
                "write_makespan_min": archive.report.write_makespan_min,
                "read_makespan_min": archive.report.read_makespan_min,
            }

        if not runs:
            raise ScenarioError(f"scenario {config.name} has no requests and no storage payload")
        plan, trace = chain_runs(runs)
        report = utilization(trace, plan.makespan, self.stack.registry.instruments)
        return RunResult(
            run_id=run_id,
            schedule=plan,
            trace=trace,
            report=report,
            outcomes=outcomes,
            optimizations=optimizations,
            journal=journal,
            storage=storage,
        )


# ==================== Ledger ====================

def new_run_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:8]}"


def _manifest(stack: LabStack, command: str, run_id: str) -> Dict[str, Any]:
    config = stack.config
    return {
        "run_id": run_id,
        "command": command,
        "scenario": config.name,
        "scenario_path": str(stack.config_path.resolve()),
        "scenario_hash": stack.digest,
        "policy": config.policy,
        "seed": config.seed,
        "budget": config.budget,
        "provenance": stack.lab.provenance(),
    }


def _finish(record: RunRecord, db: Optional[Session], status: RunStatus, error: str = None) -> RunRecord:
    record.status = status.value
    record.error = error[:500] if error else None
    record.finished_at = datetime.now(timezone.utc)
    if db is not None:
        db.add(record)
        db.commit()
        db.refresh(record)
    return record


def run_scenario(
    config_path: Union[str, Path],
    overrides: Optional[Dict[str, Any]] = None,
    out_dir: Optional[Union[str, Path]] = None,
    db: Optional[Session] = None,
) -> RunRecord:
    """
    Execute every request of a scenario and persist all artifacts.

    Args:
        config_path: scenario (.cfg) file
        overrides: any of seed, policy, budget
        out_dir: artifact root; each run writes into <out_dir>/<run_id>/
        db: optional session for the run ledger

    Returns:
        RunRecord (status SUCCEEDED); engine errors propagate after the
        record is marked FAILED
    """
    stack = LabStack.from_scenario(config_path, **(overrides or {}))
    run_id = new_run_id(stack.config.name)
    record = RunRecord(
        run_id=run_id,
        scenario_name=stack.config.name,
        scenario_hash=stack.digest,
        command="run",
        policy=stack.config.policy,
        seed=stack.config.seed,
        started_at=datetime.now(timezone.utc),
    )
    try:
        result = RunService(stack, db).execute(run_id)
    except LabError as e:
        _finish(record, db, RunStatus.FAILED, str(e))
        raise

    target = Path(out_dir or settings.OUTPUT_DIR) / run_id
    manifest = {**_manifest(stack, "run", run_id), "result": result.summary()}
    record.artifacts = export_run(target, result.trace, result.report, manifest, result.journal)
    logger.info(f"Run {run_id} finished: makespan {result.schedule.makespan_min} min")
    return _finish(record, db, RunStatus.SUCCEEDED)


def compare_policies(
    config_path: Union[str, Path],
    overrides: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """
    Run the scenario under serial_queue and dynamic with identical requests and seed.

    Each policy gets a freshly loaded stack so both start from the same inventory.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if k != "policy"}
    results = {}
    for policy in ("serial_queue", "dynamic"):
        stack = LabStack.from_scenario(config_path, policy=policy, **overrides)
        results[policy] = RunService(stack).execute(new_run_id(f"{stack.config.name}-{policy}"))

    serial, dynamic = results["serial_queue"], results["dynamic"]
    instruments = sorted(set(serial.report.ratios) | set(dynamic.report.ratios))
    return {
        "scenario": stack.config.name,
        "seed": stack.config.seed,
        "serial_makespan_min": serial.schedule.makespan_min,
        "dynamic_makespan_min": dynamic.schedule.makespan_min,
        "delta_min": round(serial.schedule.makespan_min - dynamic.schedule.makespan_min, 1),
        "speedup": round(serial.schedule.makespan / dynamic.schedule.makespan, 4),
        "dynamic_fallback": dynamic.schedule.fallback,
        "utilization": {
            i: {
                "serial": round(serial.report.ratios.get(i, 0.0), 4),
                "dynamic": round(dynamic.report.ratios.get(i, 0.0), 4),
                "delta": round(dynamic.report.ratios.get(i, 0.0) - serial.report.ratios.get(i, 0.0), 4),
            }
            for i in instruments
        },
    }


# ==================== Storage archive ====================

def store_write(
    config_path: Union[str, Path],
    payload_path: Union[str, Path],
    overrides: Optional[Dict[str, Any]] = None,
    out_dir: Optional[Union[str, Path]] = None,
    db: Optional[Session] = None,
) -> RunRecord:
    """Encode and synthesize a file; the strands and header are kept with the run."""
    stack = LabStack.from_scenario(config_path, **(overrides or {}))
    run_id = new_run_id(f"{stack.config.name}-write")
    record = RunRecord(
        run_id=run_id, scenario_name=stack.config.name, scenario_hash=stack.digest,
        command="store-write", policy=stack.config.policy, seed=stack.config.seed,
        started_at=datetime.now(timezone.utc),
    )
    try:
        data = Path(payload_path).read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read payload {payload_path}: {e}")
    try:
        strand_set, plan, trace = StorageService(stack, db).write_phase(data, run_id, stack.config.seed)
    except LabError as e:
        _finish(record, db, RunStatus.FAILED, str(e))
        raise

    target = Path(out_dir or settings.OUTPUT_DIR) / run_id
    target.mkdir(parents=True, exist_ok=True)
    (target / STRANDS_FILE).write_text("".join(f"{s}\n" for s in strand_set.sequences))
    manifest = {
        **_manifest(stack, "store-write", run_id),
        "payload": str(Path(payload_path).resolve()),
        "header": strand_set.header.model_dump(),
        "strands": STRANDS_FILE,
        "result": {"makespan_min": plan.makespan_min, "step_count": trace.step_count},
    }
    if plan.makespan > 0:
        report = utilization(trace, plan.makespan, stack.registry.instruments)
        record.artifacts = export_run(target, trace, report, manifest)
    else:
        write_manifest(target / "manifest.yaml", manifest)
        record.artifacts = {"manifest": str(target / "manifest.yaml")}
    record.artifacts["strands"] = str(target / STRANDS_FILE)
    return _finish(record, db, RunStatus.SUCCEEDED)


def store_read(
    run_id: str,
    out_dir: Optional[Union[str, Path]] = None,
    db: Optional[Session] = None,
) -> RunRecord:
    """Sequence the strands of an earlier write run and decode them."""
    source = Path(out_dir or settings.OUTPUT_DIR) / run_id
    manifest_path = source / "manifest.yaml"
    if not manifest_path.exists():
        raise StorageError(f"no write run {run_id} under {source.parent}")
    written = read_manifest(manifest_path)
    if written.get("command") != "store-write":
        raise StorageError(f"run {run_id} is not a storage write")

    stack = LabStack.from_scenario(written["scenario_path"], seed=written["seed"], policy=written["policy"])
    if stack.digest != written["scenario_hash"]:
        raise ScenarioError(f"scenario files changed since {run_id} was written")

    header = StorageHeader.model_validate(written["header"])
    sequences = (source / written["strands"]).read_text().split()
    strand_set = StrandSet(strands=tuple(Strand(index=i, sequence=s) for i, s in enumerate(sequences)), header=header)

    read_id = f"{run_id}-read"
    record = RunRecord(
        run_id=new_run_id(read_id), scenario_name=stack.config.name, scenario_hash=stack.digest,
        command="store-read", policy=stack.config.policy, seed=stack.config.seed,
        started_at=datetime.now(timezone.utc),
    )
    try:
        reads, plan, trace = StorageService(stack, db).read_phase(strand_set.sequences, read_id, stack.config.seed)
        recovered, agreement = decode_with_agreement(reads, header)
    except LabError as e:
        _finish(record, db, RunStatus.FAILED, str(e))
        raise

    target = Path(out_dir or settings.OUTPUT_DIR) / record.run_id
    target.mkdir(parents=True, exist_ok=True)
    (target / RECOVERED_FILE).write_bytes(recovered)
    original = Path(written["payload"])
    manifest = {
        **_manifest(stack, "store-read", record.run_id),
        "source_run": run_id,
        "header": header.model_dump(),
        "result": {
            "reads": len(reads),
            "recovered_bytes": len(recovered),
            "recovered_exact": original.exists() and original.read_bytes() == recovered,
            "mean_agreement": round(sum(agreement.values()) / len(agreement), 4) if agreement else 1.0,
            "makespan_min": plan.makespan_min,
            "step_count": trace.step_count,
        },
    }
    report = utilization(trace, plan.makespan, stack.registry.instruments)
    record.artifacts = export_run(target, trace, report, manifest)
    record.artifacts["recovered"] = str(target / RECOVERED_FILE)
    return _finish(record, db, RunStatus.SUCCEEDED)
