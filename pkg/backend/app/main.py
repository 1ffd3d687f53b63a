"""autolab command-line entry point.

Machine-readable results go to stdout as JSON; diagnostics go to stderr.
"""
from pathlib import Path
from typing import Any, Dict, Optional
import json
import logging
import sys

import click
from pydantic import ValidationError
from sqlalchemy.orm import sessionmaker

from app.config import settings
from app.core.exceptions import LabError, ProcedureError
from app.core.logging_config import setup_logging
from app.database import init_db, make_engine
from app.schemas.procedure import Procedure
from app.services.compiler_service import dump_program
from app.services.export_service import read_manifest
from app.services.lab_stack import LabStack
from app.services.lint_service import lint_rules
from app.services.program_service import ProgramService
from app.services.registry_service import check_registry, load_registry
from app.services.run_service import compare_policies, run_scenario, store_read, store_write
from app.services.template_service import resolve_request, template_lookup

logger = logging.getLogger(__name__)

POLICIES = {"serial": "serial_queue", "serial_queue": "serial_queue", "dynamic": "dynamic"}


def _emit(payload: Dict[str, Any]) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _overrides(policy: Optional[str], seed: Optional[int], budget: Optional[int]) -> Dict[str, Any]:
    values = {"policy": POLICIES.get(policy) if policy else None, "seed": seed, "budget": budget}
    return {k: v for k, v in values.items() if v is not None}


def _session(ctx: click.Context):
    if not ctx.obj.get("ledger"):
        return None
    engine = make_engine(settings.DATABASE_URL)
    init_db(engine)
    return sessionmaker(bind=engine, autoflush=False)()


def _fail(e: Exception) -> None:
    click.echo(f"error: {e}", err=True)
    sys.exit(1)


def _resolve_scenario(ctx: click.Context, param: click.Parameter, value: str) -> Path:
    """Accept a path, or a bare scenario name looked up under SCENARIO_DIR."""
    given = Path(value)
    candidates = [given]
    if not given.is_absolute():
        name = given if given.suffix else given.with_suffix(".cfg")
        candidates.append(Path(settings.SCENARIO_DIR) / name)
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise click.BadParameter(f"no scenario {value!r} here or in {settings.SCENARIO_DIR}", ctx=ctx, param=param)


scenario_option = click.option("--scenario", "scenario", required=True, callback=_resolve_scenario,
                               help="Scenario (.cfg) file, or its name under the scenario directory")
policy_option = click.option("--policy", type=click.Choice(sorted(POLICIES)), default=None,
                             help="Scheduling policy (overrides the scenario)")
seed_option = click.option("--seed", type=click.IntRange(min=0), default=None, help="Run seed")
budget_option = click.option("--budget", type=click.IntRange(min=1), default=None, help="Optimization iterations")
out_option = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                          help=f"Artifact directory (default {settings.OUTPUT_DIR})")


@click.group()
@click.option("--log-level", default=None, help="Logging level (default from AUTOLAB_LOG_LEVEL)")
@click.option("--ledger/--no-ledger", default=True, help="Record runs in the SQL run ledger")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str], ledger: bool):
    """Autonomous lab orchestration engine."""
    setup_logging(level=log_level)
    ctx.ensure_object(dict)
    ctx.obj["ledger"] = ledger


@cli.command()
@scenario_option
@policy_option
@seed_option
@budget_option
@out_option
@click.pass_context
def run(ctx, scenario, policy, seed, budget, out_dir):
    """Execute every request of a scenario and export its artifacts."""
    db = _session(ctx)
    try:
        record = run_scenario(scenario, _overrides(policy, seed, budget), out_dir, db)
    except LabError as e:
        _fail(e)
    manifest = read_manifest(Path(record.artifacts["manifest"]))
    _emit({"run_id": record.run_id, "status": record.status, "scenario_hash": record.scenario_hash,
           "artifacts": record.artifacts, "result": manifest.get("result", {})})


@cli.command()
@scenario_option
@seed_option
@budget_option
def compare(scenario, seed, budget):
    """Run serial_queue and dynamic on the same requests and report the difference."""
    try:
        report = compare_policies(scenario, _overrides(None, seed, budget))
    except LabError as e:
        _fail(e)
    _emit(report)


@cli.group()
def store():
    """DNA data storage archive."""


@store.command("write")
@click.argument("payload", type=click.Path(exists=True, dir_okay=False))
@scenario_option
@policy_option
@seed_option
@out_option
@click.pass_context
def store_write_command(ctx, payload, scenario, policy, seed, out_dir):
    """Encode PAYLOAD into strands and synthesize them."""
    db = _session(ctx)
    try:
        record = store_write(scenario, payload, _overrides(policy, seed, None), out_dir, db)
    except LabError as e:
        _fail(e)
    manifest = read_manifest(Path(record.artifacts["manifest"]))
    _emit({"run_id": record.run_id, "status": record.status, "header": manifest["header"],
           "artifacts": record.artifacts, "result": manifest.get("result", {})})


@store.command("read")
@click.argument("run_id")
@out_option
@click.pass_context
def store_read_command(ctx, run_id, out_dir):
    """Sequence and decode the strands written by RUN_ID."""
    db = _session(ctx)
    try:
        record = store_read(run_id, out_dir, db)
    except LabError as e:
        _fail(e)
    manifest = read_manifest(Path(record.artifacts["manifest"]))
    _emit({"run_id": record.run_id, "status": record.status, "source_run": run_id,
           "artifacts": record.artifacts, "result": manifest.get("result", {})})


@cli.command()
@click.argument("request")
@scenario_option
@click.option("--drop-step", "drop_steps", type=int, multiple=True,
              help="Remove the step at this index before compiling (repeatable)")
@click.option("--rule", "rules", type=click.Choice(lint_rules()), multiple=True,
              help="Run only these lint rules")
def lint(request, scenario, drop_steps, rules):
    """Compile REQUEST (task or task(p=v,...)) and report lint findings."""
    try:
        stack = LabStack.from_scenario(scenario)
        task, overrides = resolve_request(stack.kb, request)
        results = []
        for template in template_lookup(stack.kb, task):
            procedure = template.with_params({k: v for k, v in overrides.items() if k in template.params})
            if drop_steps:
                kept = [s.model_dump() for i, s in enumerate(procedure.steps) if i not in set(drop_steps)]
                try:
                    procedure = Procedure.model_validate({**procedure.model_dump(), "steps": kept})
                except ValidationError as e:
                    _fail(ProcedureError(f"{procedure.procedure_id} after dropping steps: {e.errors()[0]['msg']}"))
            program, report = ProgramService(stack.registry, list(rules) or None).compile(procedure, task)
            results.append({
                "procedure_id": procedure.procedure_id,
                "errors": len(report.errors),
                "findings": [f.model_dump() for f in report.findings],
                "program": dump_program(program).splitlines(),
            })
    except LabError as e:
        _fail(e)
    _emit({"request": request, "results": results})
    if any(r["errors"] for r in results):
        sys.exit(1)


@cli.group()
def registry():
    """Instrument registry tools."""


@registry.command("check")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def registry_check(path):
    """Load a registry file and report its consistency."""
    try:
        reg = load_registry(path)
    except LabError as e:
        _fail(e)
    problems = check_registry(reg)
    _emit({
        "registry": path,
        "instruments": len(reg.instruments),
        "services": len(reg.services),
        "capabilities": reg.all_tags(),
        "problems": problems,
    })
    if problems:
        sys.exit(1)


def main():
    cli(obj={})


if __name__ == "__main__":
    main()
