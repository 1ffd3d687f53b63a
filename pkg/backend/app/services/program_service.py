"""Procedure to executable program: lowering, lint passes, binding and bench placement."""
from typing import Iterable, Optional, Tuple
import logging

from app.core.exceptions import CompileError
from app.schemas.instrument import Registry
from app.schemas.procedure import Procedure
from app.schemas.program import LintReport, Program
from app.services.compiler_service import bind_and_estimate, compile_procedure
from app.services.consolidation_service import relocate_program
from app.services.lint_service import run_lints

logger = logging.getLogger(__name__)


class ProgramService:
    """Builds lint-clean, bound programs against one registry."""

    def __init__(self, registry: Registry, lints: Optional[Iterable[str]] = None):
        self.registry = registry
        self.lints = list(lints) if lints is not None else None

    def compile(self, procedure: Procedure, request_id: str, submit_time: float = 0.0) -> Tuple[Program, LintReport]:
        program = compile_procedure(procedure, self.registry, request_id, submit_time=submit_time)
        return run_lints(program, self.registry, self.lints)

    def build(self, procedure: Procedure, request_id: str, submit_time: float = 0.0, slot: int = 0) -> Program:
        """
        Compile, lint, bind and place one procedure.

        Raises:
            CompileError: lowering failed or a lint rule reported an error
        """
        program, report = self.compile(procedure, request_id, submit_time)
        if not report.ok:
            details = "; ".join(f"{f.rule}@{f.invocation_id}: {f.message}" for f in report.errors)
            raise CompileError(f"{program.program_id} failed lint: {details}").attributed(request_id)
        program = bind_and_estimate(program, self.registry)
        logger.debug(f"Built {program.program_id} in slot {slot}: {len(program.invocations)} invocations")
        return relocate_program(program, slot)
