"""Executor Agent - schedules programs on the lab, runs them and validates the trace."""
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging

from sqlalchemy.orm import Session

from app.agents.base_agent import BaseAgent
from app.core.exceptions import SchedulingError
from app.schemas.instrument import Registry
from app.schemas.optimization import Outcome
from app.schemas.program import Program
from app.schemas.schedule import EventTrace, EventType, Schedule
from app.services.scheduler_service import LabEngine
from app.services.simulation_service import reconstruct
from app.services.sim_lab_service import SimLab

logger = logging.getLogger(__name__)


class ExecutorAgent(BaseAgent):
    """Deploys programs, executes them on the simulated lab and validates the results."""

    def __init__(
        self,
        registry: Registry,
        lab: SimLab,
        policy: str = "dynamic",
        db: Optional[Session] = None,
    ):
        super().__init__(
            name="EXECUTOR",
            description="Schedules and executes programs, validates traces",
            db=db,
        )
        self.registry = registry
        self.lab = lab
        self.policy = policy

    def validate(self, plan: Schedule, trace: EventTrace) -> None:
        """Every allocation must start and finish exactly once in the trace, at its planned slot."""
        finishes = len(trace.of_kind(EventType.FINISH))
        starts = len(trace.of_kind(EventType.START))
        if finishes != len(plan.allocations) or starts != len(plan.allocations):
            raise SchedulingError(
                f"trace has {starts} starts / {finishes} finishes for {len(plan.allocations)} allocations"
            )
        try:
            replayed = reconstruct(trace)
        except KeyError as e:
            raise SchedulingError(f"trace finishes {e.args[0]} before starting it")
        drift = set(replayed).symmetric_difference(a.slot() for a in plan.allocations)
        if drift:
            raise SchedulingError(f"trace disagrees with the plan at {min(drift)}")

    def execute_programs(
        self,
        programs: Sequence[Program],
        seed: int,
        policy: Optional[str] = None,
        strands: Optional[Sequence[str]] = None,
    ) -> Tuple[Schedule, EventTrace, List[Outcome]]:
        """
        Plan and run one batch of programs together.

        Returns:
            (schedule, event trace, one outcome per program in input order)
        """
        engine = LabEngine(self.registry, policy or self.policy)
        for program in programs:
            engine.submit(program)
        plan, trace = engine.run()
        self.validate(plan, trace)
        outcomes = [self.lab.run(program, plan, seed, strands) for program in programs]
        return plan, trace, outcomes

    async def _execute_logic(self, state: Dict[str, Any]) -> Dict[str, Any]:
        state["current_stage"] = "EXECUTING"
        plan, trace, outcomes = self.execute_programs(state["programs"], state["seed"])
        state["schedule"] = plan
        state["trace"] = trace
        state["outcomes"] = outcomes
        state["runs"].append((plan, trace))
        self._log_activity(
            "EXECUTE",
            f"{len(state['programs'])} program(s) finished in {plan.makespan_min} min "
            f"({trace.step_count} steps, {plan.policy}{', serial fallback' if plan.fallback else ''})",
        )
        return state
