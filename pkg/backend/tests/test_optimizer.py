"""Lexicographic objectives, coordinate search and the closed optimization loop."""
import itertools

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.exceptions import InfeasibleAllCandidatesError, InvalidProcedureError, OptimizationError
from app.schemas.optimization import (
    SYNTHESIS_GRID,
    Exhausted,
    HistoryEntry,
    Hypothesis,
    OptimizationState,
    Outcome,
)
from app.schemas.procedure import MinimizeGoal, Objective, ReagentInventory, Request, ThresholdGoal, default_objective
from app.services.inventory_service import InventoryService
from app.services.optimizer_service import (
    CoordinateProposer,
    frontier_rank,
    lex_compare,
    lex_key,
    meets_all,
    objective_summary,
    pool_outcomes,
    propose_default,
    record_iteration,
)
from app.services.run_service import RunService
from app.services.template_service import template_lookup
from app.workflows.optimization_graph import OptimizationWorkflow, best_procedure, optimize_loop

DEFAULTS = {"buffer": "lysis", "tween20": 0.0, "cocl2": 0.25, "tdt": 1, "terminator": 1, "cycle_time": 20}
OBJ = default_objective()


def outcome(y, t=100.0) -> Outcome:
    return Outcome(stepwise_yield=y, time=t)


def entry(params, y, t=100.0, iteration=0) -> HistoryEntry:
    return HistoryEntry(iteration=iteration, procedure_id=f"p{iteration}", params=params, outcome=outcome(y, t))


def _oracle(a: Outcome, b: Outcome) -> int:
    """Threshold first, then time among the ones that meet it, yield then time among the rest."""
    met_a, met_b = a.stepwise_yield >= 0.98, b.stepwise_yield >= 0.98
    if met_a != met_b:
        return 1 if met_a else -1
    if not met_a and a.stepwise_yield != b.stepwise_yield:
        return 1 if a.stepwise_yield > b.stepwise_yield else -1
    return (a.time < b.time) - (a.time > b.time)


class TestLexicographicOrder:

    def test_threshold_dominates_time(self):
        assert lex_compare(outcome(0.985, 500), outcome(0.97, 10), OBJ) == 1

    def test_time_breaks_ties_once_met(self):
        assert lex_compare(outcome(0.981, 50), outcome(0.99, 60), OBJ) == 1
        assert lex_compare(outcome(0.99, 60), outcome(0.99, 60), OBJ) == 0

    def test_closer_to_threshold_wins_below_it(self):
        assert lex_compare(outcome(0.95, 500), outcome(0.90, 10), OBJ) == 1

    def test_missing_yield_counts_as_zero(self):
        assert lex_compare(Outcome(time=1), outcome(0.1), OBJ) == -1

    def test_matches_rule_oracle(self):
        rng = np.random.default_rng(5)
        pool = [outcome(float(rng.choice([0.9, 0.95, 0.98, 0.985, 0.99])), float(rng.integers(1, 5)))
                for _ in range(40)]
        for a, b in itertools.product(pool, repeat=2):
            assert lex_compare(a, b, OBJ) == _oracle(a, b)

    def test_total_preorder(self):
        rng = np.random.default_rng(6)
        pool = [outcome(float(rng.uniform(0.9, 1.0)), float(rng.integers(1, 4))) for _ in range(25)]
        for a, b, c in itertools.product(pool, repeat=3):
            if lex_compare(a, b, OBJ) >= 0 and lex_compare(b, c, OBJ) >= 0:
                assert lex_compare(a, c, OBJ) >= 0
            assert lex_compare(a, b, OBJ) == -lex_compare(b, a, OBJ)

    def test_threshold_only(self):
        obj = Objective(goals=(ThresholdGoal(value=0.9),))
        assert lex_key(outcome(0.95), obj) == ((1, 0.0),)
        assert meets_all(outcome(0.95), obj)
        assert objective_summary(OBJ) == ["yield >= 0.98", "min time"]

    def test_minimize_only(self):
        obj = Objective(goals=(MinimizeGoal(),))
        assert lex_compare(outcome(0.1, 5), outcome(0.99, 6), obj) == 1

    def test_objective_needs_a_goal(self):
        with pytest.raises(ValidationError):
            Objective(goals=())


class TestProposer:

    def test_first_proposal_from_defaults(self):
        hypothesis = propose_default(OptimizationState(), DEFAULTS)
        assert hypothesis.deltas == {"buffer": "bw"}
        assert hypothesis.dimension == "buffer"

    def test_skips_tried_vectors(self):
        state = OptimizationState(history=[entry(DEFAULTS, 0.90), entry({**DEFAULTS, "buffer": "bw"}, 0.93)], frontier=1)
        hypothesis = propose_default(state)
        assert hypothesis.deltas == {"tween20": 0.05}

    def test_cursor_and_exhausted_dims(self):
        state = OptimizationState(history=[entry(DEFAULTS, 0.9)], frontier=0, dim_cursor=2,
                                  exhausted_dims={"cocl2"})
        assert propose_default(state).deltas == {"tdt": 2}

    def test_never_revisits(self):
        state = OptimizationState(history=[entry(DEFAULTS, 0.9)], frontier=0)
        seen = {tuple(sorted(DEFAULTS.items()))}
        for _ in range(9):
            hypothesis = propose_default(state)
            if isinstance(hypothesis, Exhausted):
                break
            params = {**state.frontier_entry.params, **hypothesis.deltas}
            key = tuple(sorted(params.items()))
            assert key not in seen
            seen.add(key)
            state.history.append(entry(params, 0.5))

    def test_full_grid_exhausted(self):
        history = [
            entry(dict(zip(SYNTHESIS_GRID, values)), 0.9, iteration=i)
            for i, values in enumerate(itertools.product(*SYNTHESIS_GRID.values()))
        ]
        assert len(history) == 144
        state = OptimizationState(history=history, frontier=0)
        assert isinstance(propose_default(state), Exhausted)

    def test_coordinate_proposer_grid(self):
        proposer = CoordinateProposer(DEFAULTS, grid={"cycle_time": [20, 15]})
        assert proposer.propose(OptimizationState()).deltas == {"cycle_time": 15}
        assert proposer.dimension_index("cycle_time") == 0

    def test_hypothesis_must_change_something(self):
        with pytest.raises(ValidationError):
            Hypothesis(rationale="nothing", deltas={})


class TestRecordIteration:

    def test_fan_out_and_baseline(self):
        state = OptimizationState()
        assert record_iteration(state, [entry(DEFAULTS, 0.9), entry(DEFAULTS, 0.93)], OBJ) == "fan-out"
        assert state.frontier == 1
        assert record_iteration(OptimizationState(), [entry(DEFAULTS, 0.9)], OBJ) == "baseline"

    def test_no_improvement_exhausts_dimension(self):
        state = OptimizationState(history=[entry(DEFAULTS, 0.93)], frontier=0)
        hypothesis = Hypothesis(rationale="r", deltas={"tdt": 2}, dimension="tdt")
        assert record_iteration(state, [entry(DEFAULTS, 0.92, iteration=1)], OBJ, hypothesis) == "no improvement"
        assert state.exhausted_dims == {"tdt"}
        assert state.frontier == 0

    def test_regression_halts(self):
        state = OptimizationState(history=[entry(DEFAULTS, 0.985)], frontier=0)
        assert record_iteration(state, [entry(DEFAULTS, 0.955, t=50, iteration=1)], OBJ) == "halt: regression"
        assert state.halted
        assert state.frontier == 0

    def test_threshold_only_objective_met(self):
        obj = Objective(goals=(ThresholdGoal(value=0.9),))
        state = OptimizationState()
        assert record_iteration(state, [entry(DEFAULTS, 0.93)], obj) == "objective met"
        assert state.halted

    def test_pool_outcomes(self):
        pooled = pool_outcomes([
            Outcome(stepwise_yield=0.9, time=10, positive=True),
            Outcome(stepwise_yield=0.94, time=12, positive=False),
        ])
        assert pooled.stepwise_yield == pytest.approx(0.92)
        assert pooled.time == 12
        assert pooled.positive is False
        assert pool_outcomes([Outcome(time=3)]).stepwise_yield is None
        with pytest.raises(ValueError):
            pool_outcomes([])

    def test_frontier_rank_first_on_ties(self):
        history = [entry(DEFAULTS, 0.93), entry(DEFAULTS, 0.93), entry(DEFAULTS, 0.9)]
        assert frontier_rank(history, OBJ) == 0
        assert frontier_rank([], OBJ) is None


# ==================== Closed loop ====================

def synth_request(**changes) -> Request:
    return Request(**{"request_id": "synth", "task": "enzymatic_synthesis", "mode": "optimize", **changes})


@pytest.mark.asyncio
async def test_loop_trajectory(make_stack):
    stack = make_stack("synth_optimize")
    state = await OptimizationWorkflow(stack).run(synth_request(), seed=7, budget=30)
    opt = state["opt_state"]

    decisions = [(e["iteration"], e["decision"]) for e in state["journal"]]
    assert decisions == [
        (0, "fan-out"), (0, "fan-out"),
        (1, "improved"), (2, "improved"), (3, "improved"), (4, "improved"), (5, "improved"),
        (6, "halt: regression"),
    ]
    yields = [round(e["stepwise_yield"], 5) for e in state["journal"]]
    assert yields == [0.90, 0.93, 0.95, 0.957, 0.965, 0.975, 0.985, 0.95545]

    best = best_procedure(state)
    assert best.params == {"buffer": "bw", "tween20": 0.05, "cocl2": 1.0, "tdt": 2, "terminator": 2,
                           "cycle_time": 20}
    assert best.procedure_id == "enzymatic_synthesis-it5"
    assert opt.halted
    assert opt.iteration == 6
    assert opt.frontier == frontier_rank(opt.history, OBJ)
    assert len(state["runs"]) == 7


@pytest.mark.asyncio
async def test_frontier_never_regresses(make_stack):
    stack = make_stack("synth_optimize")
    state = await OptimizationWorkflow(stack).run(synth_request(), seed=7, budget=30)
    history = state["opt_state"].history
    best_so_far = None
    for index in range(len(history)):
        rank = frontier_rank(history[:index + 1], OBJ)
        current = history[rank].outcome
        if best_so_far is not None:
            assert lex_compare(current, best_so_far, OBJ) >= 0
        best_so_far = current
    params = [tuple(sorted(e.params.items())) for e in history]
    assert len(set(params)) == len(params)


@pytest.mark.asyncio
async def test_frontier_reaches_grid_optimum(make_stack):
    stack = make_stack("synth_optimize")
    state = await OptimizationWorkflow(stack).run(synth_request(), seed=7, budget=30)
    surface = stack.lab.surface
    grid_best = max(
        surface.mean(dict(zip(SYNTHESIS_GRID, values)))
        for values in itertools.product(*SYNTHESIS_GRID.values())
    )
    assert state["opt_state"].frontier_entry.outcome.stepwise_yield == pytest.approx(grid_best)


@pytest.mark.asyncio
async def test_budget_of_one(make_stack):
    state = await OptimizationWorkflow(make_stack("synth_optimize")).run(synth_request(), seed=7, budget=1)
    assert state["decision"] == "fan-out"
    assert state["opt_state"].halt_reason == "budget reached"
    assert len(state["opt_state"].history) == 2


def test_run_summary_states_objective(make_stack):
    runner = RunService(make_stack("synth_optimize", budget=1))
    summary, journal, _ = runner.optimize(synth_request(), "opt-run")
    assert summary["objective"] == ["yield >= 0.98", "min time"]
    assert summary["decision"] == "fan-out"
    assert [e["request_id"] for e in journal] == ["synth", "synth"]


@pytest.mark.asyncio
async def test_threshold_only_stops_early(make_stack):
    objective = Objective(goals=(ThresholdGoal(value=0.9),))
    state = await OptimizationWorkflow(make_stack("synth_optimize")).run(
        synth_request(objective=objective), seed=7, budget=30,
    )
    assert state["decision"] == "objective met"
    assert state["opt_state"].iteration == 0


@pytest.mark.asyncio
async def test_exhausted_search(make_stack):
    proposer = CoordinateProposer(DEFAULTS, grid={"buffer": ["lysis", "bw"]})
    state = await OptimizationWorkflow(make_stack("synth_optimize"), proposer).run(synth_request(), seed=7, budget=30)
    assert state["decision"] == "exhausted"
    assert state["opt_state"].halt_reason == "search space exhausted"


@pytest.mark.asyncio
async def test_replicates_are_pooled(make_stack):
    state = await OptimizationWorkflow(make_stack("synth_optimize")).run(
        synth_request(replicates=2), seed=7, budget=1,
    )
    assert len(state["programs"]) == 4
    assert [p.request_id for p in state["programs"]] == ["synth/0.0.0", "synth/0.0.1", "synth/0.1.0", "synth/0.1.1"]
    assert len(state["opt_state"].history) == 2


@pytest.mark.asyncio
async def test_infeasible_candidates(make_stack):
    stack = make_stack("synth_optimize")
    stack.inventory = InventoryService(ReagentInventory())
    with pytest.raises(InfeasibleAllCandidatesError) as exc:
        await OptimizationWorkflow(stack).run(synth_request(), seed=7, budget=5)
    assert exc.value.request_id == "synth"
    assert "lysis_buffer" in exc.value.missing


@pytest.mark.asyncio
async def test_unknown_parameter(make_stack):
    with pytest.raises(InvalidProcedureError) as exc:
        await OptimizationWorkflow(make_stack("synth_optimize")).run(
            synth_request(task="enzymatic_synthesis(speed=3)"), seed=7, budget=5,
        )
    assert exc.value.request_id == "synth"


@pytest.mark.asyncio
async def test_budget_must_be_positive(make_stack):
    with pytest.raises(OptimizationError):
        await OptimizationWorkflow(make_stack("synth_optimize")).run(synth_request(), seed=7, budget=0)


def test_optimize_loop_archives_frontier(make_stack):
    stack = make_stack("synth_optimize")
    best, opt = optimize_loop(synth_request(), stack, budget=3)
    assert opt.iteration == 2
    assert best.params["cocl2"] == 0.5
    [archived] = template_lookup(stack.kb, "enzymatic_synthesis_optimized")
    assert archived.procedure_id == "enzymatic_synthesis-it2-optimized"
    assert archived.params == best.params


class TestAgents:

    def test_planner_collapses_identical_candidates(self, kb):
        from app.agents.planner_agent import PlannerAgent
        planner = PlannerAgent(kb)
        assert len(planner.candidates(synth_request())) == 2
        [only] = planner.candidates(synth_request(task="enzymatic_synthesis(buffer=bw)"))
        assert only.params["buffer"] == "bw"

    def test_planner_rejects_unknown_parameter(self, kb):
        from app.agents.planner_agent import PlannerAgent
        with pytest.raises(InvalidProcedureError):
            PlannerAgent(kb).candidates(synth_request(params={"speed": 3}))

    def test_program_request_ids(self):
        from app.agents.program_agent import program_request_id
        assert program_request_id("synth", 1, 0, iteration=3) == "synth/3.1.0"
        assert program_request_id("nat", 0, 0, qualified=False) == "nat"
        assert program_request_id("s", 1, 1) == "s/1.1"
