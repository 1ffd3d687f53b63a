"""Shared fixtures: scenario files, loaded registries and fresh engine stacks."""
from pathlib import Path
from typing import List

import pytest

from app.config import settings
from app.schemas.procedure import Procedure
from app.schemas.program import Program
from app.services.lab_stack import LabStack
from app.services.program_service import ProgramService
from app.services.registry_service import load_registry
from app.services.template_service import load_templates, template_lookup

SCENARIOS = settings.SCENARIO_DIR


@pytest.fixture
def scenarios() -> Path:
    return SCENARIOS


@pytest.fixture
def registry():
    return load_registry(SCENARIOS / "standard.reg")


@pytest.fixture
def storage_registry():
    return load_registry(SCENARIOS / "storage.reg")


@pytest.fixture
def kb():
    return load_templates(SCENARIOS / "templates.kb")


@pytest.fixture
def make_stack():
    """Factory: a freshly loaded stack for a scenario name, with optional overrides."""
    def _make(name: str, **overrides) -> LabStack:
        return LabStack.from_scenario(SCENARIOS / f"{name}.cfg", **overrides)
    return _make


@pytest.fixture
def build_programs(registry):
    """Factory: compile, lint, bind and relocate procedures like the program agent does."""
    service = ProgramService(registry)

    def _build(procedures: List[Procedure], request_ids: List[str]) -> List[Program]:
        return [
            service.build(procedure, rid, slot=slot)
            for slot, (procedure, rid) in enumerate(zip(procedures, request_ids))
        ]
    return _build


@pytest.fixture
def template(kb):
    """Lookup of the first template registered for a task."""
    def _template(task: str) -> Procedure:
        return template_lookup(kb, task)[0]
    return _template
