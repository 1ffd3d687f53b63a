from app.models.agent_activity import AgentActivity
from app.models.run_record import RunRecord, RunStatus

__all__ = ["AgentActivity", "RunRecord", "RunStatus"]
