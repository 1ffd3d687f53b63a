"""Reagent Agent - screens candidates against stock and reserves what runs will consume."""
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging

from sqlalchemy.orm import Session

from app.agents.base_agent import BaseAgent
from app.agents.program_agent import program_request_id
from app.core.exceptions import InfeasibleAllCandidatesError, LabError
from app.schemas.procedure import Infeasible, Procedure
from app.services.inventory_service import InventoryService

logger = logging.getLogger(__name__)


class ReagentAgent(BaseAgent):

    def __init__(self, inventory: InventoryService, db: Optional[Session] = None):
        super().__init__(
            name="REAGENT",
            description="Screens reagent feasibility and reserves stock",
            db=db,
        )
        self.inventory = inventory

    def screen(self, candidates: Sequence[Procedure], copies: int = 1) -> Tuple[List[Procedure], Dict[str, float]]:
        """Split candidates into the ones stock covers `copies` times and the shortfall of the rest."""
        feasible, missing = [], {}
        for procedure in candidates:
            verdict = self.inventory.screen(procedure, copies)
            if isinstance(verdict, Infeasible):
                missing.update(dict(verdict.missing))
                self._log_activity(
                    "SCREEN",
                    f"{procedure.procedure_id} x{copies} rejected, short of {dict(verdict.missing)}",
                    status="WARNING",
                )
                continue
            feasible.append(procedure)
        return feasible, missing

    def reserve(self, procedure: Procedure, request_ids: Sequence[str]) -> None:
        self.inventory.reserve_all(procedure, request_ids)

    def reserve_batch(self, batch: Sequence[Tuple[Procedure, Sequence[str]]]) -> None:
        """Reserve every (procedure, request ids) pair; on failure nothing stays reserved."""
        reserved: List[str] = []
        try:
            for procedure, request_ids in batch:
                self.reserve(procedure, request_ids)
                reserved.extend(request_ids)
        except LabError:
            for request_id in reserved:
                self.inventory.release(request_id)
            raise

    async def _execute_logic(self, state: Dict[str, Any]) -> Dict[str, Any]:
        state["current_stage"] = "RESERVING"
        request = state["request"]
        feasible, missing = self.screen(state["candidates"], request.replicates)
        if not feasible:
            task = state["candidates"][0].task if state["candidates"] else request.task
            raise InfeasibleAllCandidatesError(task, missing)

        state["candidates"] = feasible
        self.reserve_batch([
            (procedure, [
                program_request_id(request.request_id, position, replicate, state["iteration"])
                for replicate in range(request.replicates)
            ])
            for position, procedure in enumerate(feasible)
        ])
        return state
