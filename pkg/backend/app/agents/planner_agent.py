"""Planner Agent - template lookup, candidate fan-out and evaluation of experiment results."""
from typing import Any, Dict, List, Optional
import logging

from sqlalchemy.orm import Session

from app.agents.base_agent import BaseAgent
from app.core.exceptions import InvalidProcedureError
from app.schemas.optimization import HistoryEntry
from app.schemas.procedure import Procedure, Request
from app.services.optimizer_service import OptimizerService
from app.services.template_service import TemplateKB, resolve_request, template_lookup
from app.workflows.state import JournalEntry

logger = logging.getLogger(__name__)


class PlannerAgent(BaseAgent):
    """Turns a request into candidate procedures and judges what came back from the lab."""

    def __init__(self, kb: TemplateKB, db: Optional[Session] = None):
        super().__init__(
            name="PLANNER",
            description="Looks up procedure templates, fans out candidates and evaluates outcomes",
            db=db,
        )
        self.kb = kb

    def candidates(self, request: Request) -> List[Procedure]:
        """
        All templates of the requested task with the request's overrides applied.

        Overrides come from the `task(p=v)` grammar and from `request.params`
        (the latter wins). Candidates that collapse onto the same procedure are
        kept once.
        """
        task, overrides = resolve_request(self.kb, request.task)
        overrides = {**overrides, **request.params}
        templates = template_lookup(self.kb, task)

        known = set().union(*(t.params for t in templates))
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise InvalidProcedureError(f"task '{task}' has no parameter {', '.join(unknown)}")

        candidates: List[Procedure] = []
        for template in templates:
            candidate = template.with_params({k: v for k, v in overrides.items() if k in template.params})
            candidate = candidate.model_copy(update={"objective": request.objective})
            if any(c.params == candidate.params and c.steps == candidate.steps for c in candidates):
                continue
            candidates.append(candidate)
        return candidates

    async def _execute_logic(self, state: Dict[str, Any]) -> Dict[str, Any]:
        state["current_stage"] = "PLANNING"
        request = state["request"]
        state["candidates"] = self.candidates(request)
        state["hypothesis"] = None
        self._log_activity(
            "PLAN",
            f"{len(state['candidates'])} candidate(s) for {request.task}",
            metadata={"procedures": [c.procedure_id for c in state["candidates"]]},
        )
        return state

    async def evaluate(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """Record this iteration's outcomes, move the frontier and decide whether to stop."""
        state["current_stage"] = "EVALUATING"
        request = state["request"]
        opt = state["opt_state"]
        optimizer = OptimizerService(request.objective)
        iteration = state["iteration"]

        entries = []
        for position, procedure in enumerate(state["candidates"]):
            replicate_outcomes = [
                outcome for outcome, candidate in zip(state["outcomes"], state["program_candidates"])
                if candidate == position
            ]
            entries.append(HistoryEntry(
                iteration=iteration,
                procedure_id=procedure.procedure_id,
                params=dict(procedure.params),
                outcome=optimizer.pool(replicate_outcomes),
            ))

        decision = optimizer.record(opt, entries, state["hypothesis"])
        recorded = len(entries)
        opt.history[-recorded:] = [e.model_copy(update={"decision": decision}) for e in opt.history[-recorded:]]
        opt.iteration = iteration
        state["procedures"].extend(state["candidates"])

        for entry in opt.history[-recorded:]:
            state["journal"].append(JournalEntry(
                iteration=iteration,
                procedure_id=entry.procedure_id,
                params=dict(entry.params),
                stepwise_yield=entry.outcome.stepwise_yield,
                time_min=entry.outcome.time,
                decision=decision,
            ))

        state["decision"] = decision
        if opt.halted:
            state["done"] = True
        elif iteration + 1 >= state["budget"]:
            opt.halt_reason = "budget reached"
            state["done"] = True

        frontier = opt.frontier_entry
        self._log_activity(
            "EVALUATE",
            f"iteration {iteration}: {decision}; frontier {frontier.procedure_id} "
            f"yield={frontier.outcome.stepwise_yield} time={frontier.outcome.time}",
            metadata={"decision": decision, "iteration": iteration},
        )
        return state
