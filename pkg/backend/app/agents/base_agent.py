"""Base class for the lab's deterministic role agents."""
from abc import ABC, abstractmethod
from typing import Any, Awaitable, Callable, Dict, Optional
import logging

from sqlalchemy.orm import Session

from app.core.exceptions import LabError
from app.models.agent_activity import AgentActivity

logger = logging.getLogger(__name__)


class BaseAgent(ABC):
    """Base class for all lab agents."""

    def __init__(self, name: str, description: str, db: Optional[Session] = None):
        """
        Initialize base agent.

        Args:
            name: Agent name (PLANNER, HYPOTHESIS, REAGENT, PROGRAM, EXECUTOR)
            description: Agent description
            db: Optional session; activity rows are only persisted when given
        """
        self.name = name
        self.description = description
        self.db = db
        self.run_id: Optional[str] = None

    async def execute(
        self,
        state: Dict[str, Any],
        action: Optional[Callable[[Dict[str, Any]], Awaitable[Dict[str, Any]]]] = None,
    ) -> Dict[str, Any]:
        """
        Execute agent logic.

        Engine errors are recorded on the state (first one wins) instead of
        propagating, so the graph can route to its error node.

        Args:
            state: Current workflow state
            action: Alternative coroutine for agents serving more than one node
        """
        try:
            logger.info(f"{self.name} executing...")
            result = await (action or self._execute_logic)(state)
            logger.info(f"{self.name} completed successfully")
            return result
        except LabError as e:
            request = state.get("request")
            if request is not None:
                e.attributed(request.request_id)
            logger.error(f"{self.name} error: {e}")
            self._log_activity("ERROR", str(e), status="ERROR")
            if state.get("error") is None:
                state["error"] = e
            state["errors"].append(f"{self.name}: {e}")
            return state

    @abstractmethod
    async def _execute_logic(self, state: Dict[str, Any]) -> Dict[str, Any]:
        """
        Implement agent-specific logic.

        Args:
            state: Current workflow state

        Returns:
            Updated state
        """

    def _log_activity(
        self,
        action_type: str,
        message: str,
        status: str = "INFO",
        metadata: Optional[Dict[str, Any]] = None,
    ) -> None:
        """Log agent activity to the logger and, with a session, to the database."""
        level = logging.ERROR if status == "ERROR" else logging.INFO
        logger.log(level, f"[{self.name}/{action_type}] {message}")
        if self.db is None:
            return
        try:
            self.db.add(AgentActivity(
                run_id=self.run_id,
                agent_name=self.name,
                action_type=action_type,
                message=message,
                context_data=metadata or {},
                status=status,
            ))
            self.db.commit()
        except Exception as e:
            logger.error(f"Error logging activity: {e}")
            self.db.rollback()
