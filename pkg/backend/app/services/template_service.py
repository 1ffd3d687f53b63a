"""Procedure template knowledge base and the request grammar."""
from pathlib import Path
from typing import Dict, List, Tuple, Union
import logging
import re

import yaml
from pydantic import BaseModel, Field, ValidationError

from app.core.exceptions import ProcedureError, RequestParseError, UnknownTaskError
from app.schemas.procedure import Procedure, Scalar

logger = logging.getLogger(__name__)


class TemplateKB(BaseModel):
    """Procedure templates keyed by task name, in registration order."""
    templates: Dict[str, List[Procedure]] = Field(default_factory=dict)

    def tasks(self) -> List[str]:
        return sorted(self.templates)

    def register(self, procedure: Procedure, task: str = None) -> None:
        task = task or procedure.task
        self.templates.setdefault(task, []).append(procedure)


def load_templates(file_path: Union[str, Path]) -> TemplateKB:
    path = Path(file_path)
    try:
        document = yaml.safe_load(path.read_text()) or {}
        kb = TemplateKB.model_validate(document)
    except (OSError, yaml.YAMLError, ValidationError) as e:
        raise ProcedureError(f"cannot load template KB {path}: {e}")
    logger.info(f"Loaded {sum(len(v) for v in kb.templates.values())} templates from {path.name}")
    return kb


def save_templates(kb: TemplateKB, file_path: Union[str, Path]) -> Path:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = kb.model_dump(mode="json")
    path.write_text(yaml.safe_dump(document, sort_keys=False))
    return path


def template_lookup(kb: TemplateKB, task: str) -> List[Procedure]:
    """All templates registered under `task` at default params ([] if unknown)."""
    return list(kb.templates.get(task, []))


def archive_optimized(kb: TemplateKB, procedure: Procedure) -> Procedure:
    """Store an optimized procedure as `<task>_optimized`, replacing any earlier one."""
    task = f"{procedure.task}_optimized"
    archived = procedure.model_copy(update={"procedure_id": f"{procedure.procedure_id}-optimized"})
    kb.templates[task] = [archived]
    logger.info(f"Archived {archived.procedure_id} under {task}")
    return archived


# ==================== Request grammar ====================

_REQUEST = re.compile(r"^\s*(?P<task>[A-Za-z_][A-Za-z0-9_]*)\s*(?:\((?P<args>.*)\))?\s*$")
_ARG = re.compile(r"^\s*(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s*=\s*(?P<value>[^=]+?)\s*$")


def _coerce(text: str) -> Scalar:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text.strip("'\"")


def parse_request(text: str) -> Tuple[str, Dict[str, Scalar]]:
    """
    Parse `task(name=value, ...)` into the task name and typed overrides.

    Args:
        text: request text, e.g. "enzymatic_synthesis(buffer=bw, cycle_time=15)"

    Returns:
        (task, params)
    """
    match = _REQUEST.match(text)
    if not match:
        raise RequestParseError(f"malformed request: {text!r}")

    params: Dict[str, Scalar] = {}
    args = match.group("args")
    if args and args.strip():
        for chunk in args.split(","):
            arg = _ARG.match(chunk)
            if not arg:
                raise RequestParseError(f"malformed argument {chunk.strip()!r} in {text!r}")
            name = arg.group("name")
            if name in params:
                raise RequestParseError(f"argument '{name}' given twice in {text!r}")
            params[name] = _coerce(arg.group("value"))
    return match.group("task"), params


def resolve_request(kb: TemplateKB, text: str) -> Tuple[str, Dict[str, Scalar]]:
    """Parse a request and reject tasks the knowledge base does not know."""
    task, params = parse_request(text)
    if task not in kb.templates:
        raise UnknownTaskError(task)
    return task, params
