"""Program Agent - compiles, lints and binds procedures into executable programs."""
from typing import Any, Dict, Iterable, List, Optional
import logging

from sqlalchemy.orm import Session

from app.agents.base_agent import BaseAgent
from app.schemas.instrument import Registry
from app.schemas.procedure import Procedure
from app.schemas.program import Program
from app.services.program_service import ProgramService

logger = logging.getLogger(__name__)


def program_request_id(
    request_id: str,
    candidate: int,
    replicate: int,
    iteration: Optional[int] = None,
    qualified: bool = True,
) -> str:
    """
    Request id carried by one compiled program.

    Optimization runs always qualify ids as `<req>/<iteration>.<candidate>.<replicate>`;
    single runs only when a request fans out into several programs.
    """
    if not qualified and iteration is None:
        return request_id
    parts = [str(p) for p in (iteration, candidate, replicate) if p is not None]
    return f"{request_id}/{'.'.join(parts)}"


class ProgramAgent(BaseAgent):
    """Procedure -> lint-clean, bound Program."""

    def __init__(
        self,
        registry: Registry,
        lints: Optional[Iterable[str]] = None,
        db: Optional[Session] = None,
    ):
        super().__init__(
            name="PROGRAM",
            description="Compiles procedures to instrument invocations and applies lint rules",
            db=db,
        )
        self.program_service = ProgramService(registry, lints)

    def build(self, procedure: Procedure, request_id: str, submit_time: float = 0.0, slot: int = 0) -> Program:
        return self.program_service.build(procedure, request_id, submit_time, slot)

    async def _execute_logic(self, state: Dict[str, Any]) -> Dict[str, Any]:
        state["current_stage"] = "COMPILING"
        request = state["request"]
        programs: List[Program] = []
        positions: List[int] = []
        for position, procedure in enumerate(state["candidates"]):
            for replicate in range(request.replicates):
                rid = program_request_id(request.request_id, position, replicate, state["iteration"])
                programs.append(self.build(procedure, rid, request.submit_time, slot=len(programs)))
                positions.append(position)

        state["programs"] = programs
        state["program_candidates"] = positions
        self._log_activity(
            "COMPILE",
            f"{len(programs)} program(s), {sum(len(p.invocations) for p in programs)} invocations",
        )
        return state
