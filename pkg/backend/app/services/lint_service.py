"""Program validation passes.

Rules register by name. A rule may rewrite the program (seal inference) or
only report findings (transfer-before-activate); `run_lints` applies every
enabled rule in registration order.
"""
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple
import logging

import networkx as nx

from app.core.exceptions import CompileError, NoCapableInstrumentError
from app.schemas.instrument import Registry
from app.schemas.procedure import Container
from app.schemas.program import Invocation, LintFinding, LintReport, Program
from app.services.compiler_service import is_topologically_ordered, program_graph
from app.services.registry_service import services_with_capability

logger = logging.getLogger(__name__)

LintRule = Callable[[Program, Registry], Tuple[Program, LintReport]]

_RULES: Dict[str, LintRule] = {}

ACTIVATION_PREFIXES = ("thermal.", "optical.")


def register_lint(name: str):
    """Decorator adding a rule to the registry under `name`."""
    def decorator(rule: LintRule) -> LintRule:
        _RULES[name] = rule
        return rule
    return decorator


def lint_rules() -> List[str]:
    return list(_RULES)


def run_lints(
    prog: Program,
    reg: Registry,
    enabled: Optional[Iterable[str]] = None,
) -> Tuple[Program, LintReport]:
    names = list(enabled) if enabled is not None else lint_rules()
    report = LintReport()
    for name in names:
        prog, findings = _RULES[name](prog, reg)
        report = report.extend(findings)
    if not is_topologically_ordered(prog):
        raise CompileError(f"{prog.program_id}: invocations out of dependency order after linting")
    if report.findings:
        logger.warning(f"{prog.program_id}: {len(report.errors)} lint errors, "
                       f"{len(report.findings) - len(report.errors)} warnings")
    return prog, report


# ==================== Seal inference ====================

def _open_before_activation(prog: Program) -> Dict[int, Tuple[Container, ...]]:
    """Replay cap state; map invocation id -> containers left open at a sealed activation."""
    sealed: Set[Container] = set()
    needs_cap: Dict[int, Tuple[Container, ...]] = {}
    for inv in prog.invocations:
        if inv.capability == "mechanical.cap":
            if inv.params.get("action") == "uncap":
                sealed.difference_update(inv.reads)
            else:
                sealed.update(inv.reads)
        elif inv.requires_sealed and inv.capability.startswith("thermal."):
            open_containers = tuple(c for c in inv.reads if c not in sealed)
            if open_containers:
                needs_cap[inv.invocation_id] = open_containers
                sealed.update(open_containers)
    return needs_cap


def lint_seal_inference(prog: Program, reg: Registry) -> Program:
    """Insert a mechanical.cap before every sealed incubation on an open container."""
    needs_cap = _open_before_activation(prog)
    if not needs_cap:
        return prog
    if not services_with_capability(reg, "mechanical.cap"):
        raise NoCapableInstrumentError("seal inference", "mechanical.cap")

    renumbered: Dict[int, int] = {}
    rewritten: List[Invocation] = []
    for inv in prog.invocations:
        deps = tuple(sorted(renumbered[d] for d in inv.depends_on))
        if inv.invocation_id in needs_cap:
            cap_id = len(rewritten)
            rewritten.append(Invocation(
                invocation_id=cap_id,
                capability="mechanical.cap",
                params={"action": "cap"},
                reads=needs_cap[inv.invocation_id],
                depends_on=deps,
                step_index=inv.step_index,
                step_kind="seal",
                sources=(f"{prog.request_id}#seal{inv.invocation_id}",),
            ))
            deps = (cap_id,)
        renumbered[inv.invocation_id] = len(rewritten)
        rewritten.append(inv.model_copy(update={"invocation_id": len(rewritten), "depends_on": deps}))

    logger.info(f"{prog.program_id}: inferred {len(needs_cap)} seal operation(s)")
    return prog.model_copy(update={"invocations": tuple(rewritten)})


@register_lint("seal_inference")
def _seal_inference_rule(prog: Program, reg: Registry) -> Tuple[Program, LintReport]:
    return lint_seal_inference(prog, reg), LintReport()


# ==================== Transfer before activate ====================

def lint_transfer_before_activate(prog: Program) -> LintReport:
    """Flag thermal/optical activations on containers nothing has filled yet."""
    graph = program_graph(prog)
    findings = []
    for inv in prog.invocations:
        if not inv.capability.startswith(ACTIVATION_PREFIXES):
            continue
        written = set()
        for ancestor in nx.ancestors(graph, inv.invocation_id):
            written.update(prog.invocation(ancestor).writes)
        empty = [c for c in inv.reads if c not in written]
        if empty:
            findings.append(LintFinding(
                severity="error",
                rule="transfer_before_activate",
                invocation_id=inv.invocation_id,
                message=f"{inv.capability} on empty container(s) {', '.join(str(c) for c in empty)}",
            ))
    return LintReport(findings=findings)


@register_lint("transfer_before_activate")
def _transfer_before_activate_rule(prog: Program, reg: Registry) -> Tuple[Program, LintReport]:
    return prog, lint_transfer_before_activate(prog)
