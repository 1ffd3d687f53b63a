"""Hypothesis Agent - proposes the next protocol change from the optimization frontier."""
from typing import Any, Dict, Optional
import logging

from sqlalchemy.orm import Session

from app.agents.base_agent import BaseAgent
from app.schemas.optimization import Exhausted
from app.services.optimizer_service import CoordinateProposer, ProposerStrategy

logger = logging.getLogger(__name__)


class HypothesisAgent(BaseAgent):
    """Wraps a ProposerStrategy; one hypothesis per iteration."""

    def __init__(self, proposer: Optional[ProposerStrategy] = None, db: Optional[Session] = None):
        super().__init__(
            name="HYPOTHESIS",
            description="Generates optimization hypotheses for existing procedures",
            db=db,
        )
        self.proposer = proposer or CoordinateProposer(defaults={})

    async def _execute_logic(self, state: Dict[str, Any]) -> Dict[str, Any]:
        state["current_stage"] = "PROPOSING"
        opt = state["opt_state"]
        result = self.proposer.propose(opt, state["seed"])

        if isinstance(result, Exhausted):
            opt.halt_reason = result.reason
            state["decision"] = "exhausted"
            state["done"] = True
            self._log_activity("PROPOSE", f"nothing left to try: {result.reason}")
            return state

        if isinstance(self.proposer, CoordinateProposer) and result.dimension in self.proposer.grid:
            opt.dim_cursor = self.proposer.dimension_index(result.dimension)

        iteration = state["iteration"] + 1
        base = state["procedures"][opt.frontier]
        candidate = base.with_params(dict(result.deltas), procedure_id=f"{base.task}-it{iteration}")

        state["iteration"] = iteration
        state["hypothesis"] = result
        state["candidates"] = [candidate]
        self._log_activity(
            "PROPOSE",
            f"iteration {iteration}: {result.rationale}",
            metadata={"deltas": dict(result.deltas), "base": base.procedure_id},
        )
        return state
