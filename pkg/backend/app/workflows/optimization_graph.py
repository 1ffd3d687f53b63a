"""LangGraph workflow for the closed design-experiment-optimize loop."""
from typing import Optional, Tuple
import asyncio
import logging
import uuid

from langgraph.graph import END, StateGraph
from sqlalchemy.orm import Session

from app.agents.executor_agent import ExecutorAgent
from app.agents.hypothesis_agent import HypothesisAgent
from app.agents.planner_agent import PlannerAgent
from app.agents.program_agent import ProgramAgent
from app.agents.reagent_agent import ReagentAgent
from app.core.exceptions import OptimizationError
from app.schemas.optimization import OptimizationState
from app.schemas.procedure import Procedure, Request
from app.services.lab_stack import LabStack
from app.services.optimizer_service import OptimizerService, ProposerStrategy
from app.services.template_service import archive_optimized
from app.workflows.state import OptimizationLoopState, create_initial_state

logger = logging.getLogger(__name__)

# graph steps per loop iteration (reserve, compile, execute, evaluate, propose)
STEPS_PER_ITERATION = 5


class OptimizationWorkflow:
    """One request's optimization loop as a LangGraph state machine."""

    def __init__(
        self,
        stack: LabStack,
        proposer: Optional[ProposerStrategy] = None,
        db: Optional[Session] = None,
    ):
        """
        Initialize the optimization workflow.

        Args:
            stack: loaded scenario (registry, KB, inventory, simulated lab)
            proposer: hypothesis strategy; coordinate search when omitted
            db: optional session for agent activity rows
        """
        self.stack = stack
        self.planner = PlannerAgent(stack.kb, db)
        self.hypothesis_agent = HypothesisAgent(proposer, db)
        self.reagent_agent = ReagentAgent(stack.inventory, db)
        self.program_agent = ProgramAgent(stack.registry, db=db)
        self.executor = ExecutorAgent(stack.registry, stack.lab, stack.config.policy, db)

        self.graph = self._build_graph()

    @property
    def agents(self):
        return [self.planner, self.hypothesis_agent, self.reagent_agent, self.program_agent, self.executor]

    def _build_graph(self) -> StateGraph:
        workflow = StateGraph(OptimizationLoopState)

        workflow.add_node("plan", self._plan_node)
        workflow.add_node("reserve", self._reserve_node)
        workflow.add_node("compile", self._compile_node)
        workflow.add_node("execute", self._execute_node)
        workflow.add_node("evaluate", self._evaluate_node)
        workflow.add_node("propose", self._propose_node)
        workflow.add_node("handle_error", self._handle_error_node)

        workflow.set_entry_point("plan")

        for node, following in (("plan", "reserve"), ("reserve", "compile"),
                                ("compile", "execute"), ("execute", "evaluate")):
            workflow.add_conditional_edges(
                node,
                self._should_continue,
                {"continue": following, "error": "handle_error"},
            )

        workflow.add_conditional_edges(
            "evaluate",
            self._should_iterate,
            {"iterate": "propose", "done": END, "error": "handle_error"},
        )
        workflow.add_conditional_edges(
            "propose",
            self._should_iterate,
            {"iterate": "reserve", "done": END, "error": "handle_error"},
        )

        workflow.add_edge("handle_error", END)

        return workflow.compile()

    # ==================== Node Functions ====================

    async def _plan_node(self, state: OptimizationLoopState) -> OptimizationLoopState:
        return await self.planner.execute(state)

    async def _reserve_node(self, state: OptimizationLoopState) -> OptimizationLoopState:
        return await self.reagent_agent.execute(state)

    async def _compile_node(self, state: OptimizationLoopState) -> OptimizationLoopState:
        return await self.program_agent.execute(state)

    async def _execute_node(self, state: OptimizationLoopState) -> OptimizationLoopState:
        return await self.executor.execute(state)

    async def _evaluate_node(self, state: OptimizationLoopState) -> OptimizationLoopState:
        return await self.planner.execute(state, self.planner.evaluate)

    async def _propose_node(self, state: OptimizationLoopState) -> OptimizationLoopState:
        return await self.hypothesis_agent.execute(state)

    async def _handle_error_node(self, state: OptimizationLoopState) -> OptimizationLoopState:
        state["current_stage"] = "ERROR"
        logger.error(f"Optimization of {state['request'].request_id} failed: {state['errors']}")
        return state

    # ==================== Conditional Edge Functions ====================

    def _should_continue(self, state: OptimizationLoopState) -> str:
        return "error" if state.get("error") is not None else "continue"

    def _should_iterate(self, state: OptimizationLoopState) -> str:
        if state.get("error") is not None:
            return "error"
        return "done" if state["done"] else "iterate"

    # ==================== Public Methods ====================

    async def run(self, request: Request, seed: int, budget: int, run_id: Optional[str] = None) -> OptimizationLoopState:
        """
        Run the loop until a stop rule fires.

        Returns:
            Final workflow state

        Raises:
            LabError: the first engine error any node recorded, attributed to the request
        """
        if budget < 1:
            raise OptimizationError(f"budget must be at least 1, got {budget}").attributed(request.request_id)
        run_id = run_id or uuid.uuid4().hex[:12]
        for agent in self.agents:
            agent.run_id = run_id

        initial_state = create_initial_state(request, run_id, seed, budget)
        goals = ", ".join(OptimizerService(request.objective).summary())
        logger.info(f"Starting optimization of {request.request_id} ({request.task}) for {goals}, budget {budget}")

        final_state = await self.graph.ainvoke(
            initial_state,
            config={"recursion_limit": STEPS_PER_ITERATION * budget + 10},
        )

        if final_state.get("error") is not None:
            raise final_state["error"]

        opt = final_state["opt_state"]
        logger.info(f"Optimization of {request.request_id} finished after {opt.iteration + 1} iteration(s): "
                    f"{final_state['decision']} {opt.halt_reason}".rstrip())
        return final_state


def best_procedure(state: OptimizationLoopState) -> Procedure:
    return state["procedures"][state["opt_state"].frontier]


def optimize_loop(
    req: Request,
    stack: LabStack,
    proposer: Optional[ProposerStrategy] = None,
    budget: Optional[int] = None,
    seed: Optional[int] = None,
    archive: bool = True,
) -> Tuple[Procedure, OptimizationState]:
    """
    Synchronous entry point: optimize one request and archive the frontier.

    Returns:
        (best procedure, final optimization state)
    """
    workflow = OptimizationWorkflow(stack, proposer)
    final_state = asyncio.run(workflow.run(
        req,
        seed=stack.config.seed if seed is None else seed,
        budget=stack.config.budget if budget is None else budget,
    ))
    best = best_procedure(final_state)
    if archive:
        archive_optimized(stack.kb, best)
    return best, final_state["opt_state"]
