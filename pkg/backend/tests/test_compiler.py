"""Procedure lowering, lint passes, relocation and consolidation."""
from pathlib import Path

import pytest

from app.core.exceptions import (
    CompileError,
    IncompatibleProgramsError,
    NoCapableInstrumentError,
    ParamOutOfRangeError,
)
from app.schemas.procedure import Container, IncubateStep, MeasureStep, SealStep
from app.schemas.program import Invocation, Program
from app.services.compiler_service import (
    bind_and_estimate,
    compile_procedure,
    critical_path,
    dump_program,
    is_dag,
    is_topologically_ordered,
)
from app.services.consolidation_service import consolidate, relocate_program, working_containers
from app.services.lint_service import lint_rules, lint_seal_inference, run_lints
from app.services.program_service import ProgramService
from app.services.registry_service import build_registry

GOLDEN = Path(__file__).parent / "golden"


def _compile_clean(procedure, registry, request_id="req"):
    program = compile_procedure(procedure, registry, request_id)
    program, report = run_lints(program, registry)
    return program, report


class TestCompile:

    def test_rpa_matches_golden_dump(self, template, registry):
        program, report = _compile_clean(template("nucleic_acid_test"), registry)
        assert report.ok
        assert dump_program(program) == (GOLDEN / "rpa_program.txt").read_text()

    def test_synthesis_expands_every_cycle(self, template, registry):
        program = compile_procedure(template("enzymatic_synthesis"), registry, "synth")
        # initiator transfer with two moves, then six invocations per cycle
        assert len(program.invocations) == 3 + 8 * 6
        assert is_dag(program)
        assert is_topologically_ordered(program)
        assert program.params["buffer"] == "lysis"

    def test_param_refs_resolve(self, template, registry):
        procedure = template("enzymatic_synthesis").with_params({"buffer": "bw", "cycle_time": 15})
        program = compile_procedure(procedure, registry, "synth")
        holds = [inv for inv in program.invocations if inv.capability == "thermal.hold"]
        washes = [inv for inv in program.invocations if inv.capability == "magnetic.wash"]
        assert {inv.params["duration"] for inv in holds} == {15, 5.0}
        assert {inv.params["buffer"] for inv in washes} == {"bw"}

    def test_out_of_range_param(self, template, registry):
        procedure = template("polya_tailing")
        steps = list(procedure.steps)
        steps[1] = IncubateStep(temp=150, duration=30)
        with pytest.raises(ParamOutOfRangeError) as exc:
            compile_procedure(procedure.model_copy(update={"steps": tuple(steps)}), registry, "p")
        assert exc.value.param == "temp"

    def test_no_capable_instrument(self, template, registry):
        reduced = build_registry(i for i in registry.instruments.values() if i.instrument_id != "sequencer")
        with pytest.raises(NoCapableInstrumentError) as exc:
            compile_procedure(template("storage_read"), reduced, "read")
        assert exc.value.tag == "sequencing.read"

    def test_critical_path_of_chain(self, template, registry):
        program, _ = _compile_clean(template("nucleic_acid_test"), registry)
        bound = bind_and_estimate(program, registry)
        # move 0.5, transfer 1.5, move 0.5, cap 0.3, hold 20.5, read 2.0
        assert critical_path(bound) == pytest.approx(25.3)
        assert bound.est_total == pytest.approx(25.3)

    def test_unbound_program_has_no_estimate(self, template, registry):
        program = compile_procedure(template("nucleic_acid_test"), registry, "r")
        assert program.est_total is None


class TestLint:

    def test_rules_registered_in_order(self):
        assert lint_rules() == ["seal_inference", "transfer_before_activate"]

    def test_seal_inference_inserts_one_cap(self, template, registry):
        program = compile_procedure(template("nucleic_acid_test"), registry, "r")
        sealed = lint_seal_inference(program, registry)
        caps = [inv for inv in sealed.invocations if inv.capability == "mechanical.cap"]
        assert len(caps) == 1
        assert len(sealed.invocations) == len(program.invocations) + 1
        hold = next(inv for inv in sealed.invocations if inv.capability == "thermal.hold")
        assert hold.depends_on == (caps[0].invocation_id,)
        assert is_topologically_ordered(sealed)

    def test_seal_inference_is_idempotent(self, template, registry):
        program = compile_procedure(template("nucleic_acid_test"), registry, "r")
        once = lint_seal_inference(program, registry)
        assert lint_seal_inference(once, registry) == once

    def test_explicit_seal_needs_no_inference(self, template, registry):
        procedure = template("nucleic_acid_test")
        steps = list(procedure.steps)
        steps.insert(1, SealStep())
        sealed = procedure.model_copy(update={"steps": tuple(steps)})
        program = compile_procedure(sealed, registry, "r")
        assert lint_seal_inference(program, registry) == program

    def test_unsealed_incubation_left_alone(self, template, registry):
        program = compile_procedure(template("polya_tailing"), registry, "p")
        assert lint_seal_inference(program, registry) == program

    def test_missing_transfer_flags_activations(self, template, registry):
        procedure = template("nucleic_acid_test")
        dropped = procedure.model_copy(update={"steps": procedure.steps[1:]})
        _, report = _compile_clean(dropped, registry)
        assert len(report.errors) == 2
        assert {f.rule for f in report.errors} == {"transfer_before_activate"}

    def test_build_refuses_lint_errors(self, template, registry):
        procedure = template("nucleic_acid_test")
        dropped = procedure.model_copy(update={"steps": procedure.steps[1:]})
        with pytest.raises(CompileError, match="failed lint") as exc:
            ProgramService(registry).build(dropped, "r")
        assert exc.value.request_id == "r"

    def test_build_places_program_in_slot(self, template, registry):
        program = ProgramService(registry).build(template("nucleic_acid_test"), "r", slot=2)
        assert [str(c) for c in working_containers(program)] == ["bench/17.1"]
        assert program.est_total == pytest.approx(25.3)

    def test_measure_on_unfilled_well(self, registry):
        program = Program(program_id="p", request_id="p", invocations=(
            Invocation(invocation_id=0, capability="optical.fluorescence",
                       reads=(Container(row=3, col=3),)),
        ))
        _, report = run_lints(program, registry, ["transfer_before_activate"])
        assert [f.invocation_id for f in report.errors] == [0]

    def test_out_of_order_program_rejected(self, registry):
        program = Program(program_id="p", request_id="p", invocations=(
            Invocation(invocation_id=0, capability="optical.fluorescence", depends_on=(1,)),
            Invocation(invocation_id=1, capability="thermal.hold", params={"temp": 39, "duration": 5}),
        ))
        assert not is_topologically_ordered(program)
        with pytest.raises(CompileError, match="dependency order"):
            run_lints(program, registry, [])

    def test_storage_read_is_clean(self, template, registry):
        _, report = _compile_clean(template("storage_read"), registry)
        assert report.ok
        assert isinstance(template("storage_read").steps[-1], MeasureStep)


class TestRelocation:

    def test_working_containers_move_reservoirs_stay(self, template, registry):
        program, _ = _compile_clean(template("nucleic_acid_test"), registry)
        moved = relocate_program(program, 2)
        assert [str(c) for c in working_containers(moved)] == ["bench/17.1"]
        transfer = next(inv for inv in moved.invocations if inv.capability == "liquid.transfer")
        assert str(transfer.reads[0]) == "reagents/4.1"

    def test_slot_zero_is_identity(self, template, registry):
        program, _ = _compile_clean(template("nucleic_acid_test"), registry)
        assert relocate_program(program, 0) == program


class TestConsolidation:

    def test_synthesis_programs_share_operations(self, template, build_programs, registry):
        procedures = [template("enzymatic_synthesis")] * 4
        programs = build_programs(procedures, ["a", "b", "c", "d"])
        merged = consolidate(programs, registry)
        assert merged.request_id == "a+b+c+d"
        assert len(merged.invocations) < sum(len(p.invocations) for p in programs)
        # every original invocation is accounted for exactly once
        sources = [s for inv in merged.invocations for s in inv.sources]
        assert len(sources) == sum(len(p.invocations) for p in programs)
        assert len(set(sources)) == len(sources)
        assert sum(inv.merged_count for inv in merged.invocations) == len(sources)
        assert is_topologically_ordered(merged)

    def test_transfers_respect_channel_limit(self, template, build_programs, registry):
        programs = build_programs([template("nucleic_acid_test")] * 10, [f"s{i}" for i in range(10)])
        merged = consolidate(programs, registry)
        transfers = [inv for inv in merged.invocations if inv.capability == "liquid.transfer"]
        assert sum(inv.merged_count for inv in transfers) == 10
        assert max(inv.merged_count for inv in transfers) == registry.instruments["pipette"].channels
        for inv in transfers:
            cols = sorted(c.col for c in inv.writes)
            assert cols == list(range(cols[0], cols[0] + len(cols)))

    def test_array_layout_one_column_per_program(self, template, build_programs, registry):
        programs = build_programs([template("nucleic_acid_test")] * 3, ["x", "y", "z"])
        merged = consolidate(programs, registry)
        written = {(c.zone, c.row, c.col) for inv in merged.invocations for c in inv.writes}
        assert written == {("array", 0, 0), ("array", 0, 1), ("array", 0, 2)}

    def test_single_program_unchanged(self, template, build_programs, registry):
        [program] = build_programs([template("polya_tailing")], ["solo"])
        assert consolidate([program], registry) == program

    def test_overlapping_containers_rejected(self, template, registry):
        program, _ = _compile_clean(template("polya_tailing"), registry, "a")
        other = program.model_copy(update={"program_id": "b:polya", "request_id": "b"})
        with pytest.raises(IncompatibleProgramsError):
            consolidate([program, other], registry)
