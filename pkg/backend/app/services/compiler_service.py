"""Lower chemical procedures into hardware programs of atomic-service invocations."""
from typing import Dict, List, Optional, Tuple
import logging

import networkx as nx

from app.core.exceptions import (
    CompileError,
    NoCapableInstrumentError,
    ParamOutOfRangeError,
)
from app.schemas.instrument import Registry
from app.schemas.procedure import (
    CYCLE_WASH_REPEATS,
    DEBLOCK_TIME,
    DEBLOCK_VOLUME,
    EXTENSION_TEMP,
    EXTENSION_VOLUME,
    Container,
    IncubateStep,
    MeasureStep,
    MixStep,
    Procedure,
    SealStep,
    SynthesisCycleStep,
    ThermalCycleStep,
    TransferStep,
    UnsealStep,
    WashStep,
)
from app.schemas.program import Invocation, Program
from app.schemas.schedule import to_minutes
from app.services.registry_service import capable_services, services_with_capability

logger = logging.getLogger(__name__)

# Reservoir layout of the synthesis reagents
EXTENSION_RESERVOIRS = {base: Container(zone="reagents", row=1, col=col)
                        for col, base in enumerate("ACGT", start=1)}
DEBLOCK_RESERVOIR = Container(zone="reagents", row=2, col=1)

# (capability, params, reads, writes, requires_sealed)
_Draft = Tuple[str, Dict, Tuple[Container, ...], Tuple[Container, ...], bool]


def _lower_transfer(step: TransferStep) -> List[_Draft]:
    transfer = ("liquid.transfer", {"reagent": step.reagent, "volume": step.volume},
                (step.src,), (step.dst,), False)
    if step.src.zone == step.dst.zone:
        return [transfer]
    return [
        ("mechanical.move", {"from_zone": step.src.zone, "to_zone": step.dst.zone}, (), (), False),
        transfer,
        ("mechanical.move", {"from_zone": step.dst.zone, "to_zone": step.src.zone}, (), (), False),
    ]


def _lower_synthesis_cycle(step: SynthesisCycleStep) -> List[_Draft]:
    well = step.container
    wash = ("magnetic.wash", {"buffer": step.buffer, "repeats": CYCLE_WASH_REPEATS}, (well,), (well,), False)
    return [
        ("liquid.transfer", {"reagent": f"extension_mix_{step.base}", "volume": EXTENSION_VOLUME},
         (EXTENSION_RESERVOIRS[step.base],), (well,), False),
        ("thermal.hold", {"temp": EXTENSION_TEMP, "duration": step.cycle_time}, (well,), (), False),
        wash,
        ("liquid.transfer", {"reagent": "deblock_mix", "volume": DEBLOCK_VOLUME},
         (DEBLOCK_RESERVOIR,), (well,), False),
        ("thermal.hold", {"temp": EXTENSION_TEMP, "duration": DEBLOCK_TIME}, (well,), (), False),
        wash,
    ]


def lower_step(step) -> List[_Draft]:
    """Capability-level expansion of one resolved step."""
    if isinstance(step, TransferStep):
        return _lower_transfer(step)
    if isinstance(step, IncubateStep):
        return [("thermal.hold", {"temp": step.temp, "duration": step.duration},
                 (step.container,), (), step.requires_sealed)]
    if isinstance(step, MeasureStep):
        tag = "optical.fluorescence" if step.modality == "fluorescence" else "sequencing.read"
        return [(tag, {}, (step.container,), (), False)]
    if isinstance(step, WashStep):
        return [("magnetic.wash", {"buffer": step.buffer, "repeats": step.repeats},
                 (step.container,), (step.container,), False)]
    if isinstance(step, MixStep):
        return [("liquid.mix", {"volume": step.volume}, (step.container,), (step.container,), False)]
    if isinstance(step, SealStep):
        return [("mechanical.cap", {"action": "cap"}, (step.container,), (), False)]
    if isinstance(step, UnsealStep):
        return [("mechanical.cap", {"action": "uncap"}, (step.container,), (), False)]
    if isinstance(step, ThermalCycleStep):
        return [("thermal.cycle", {"cycles": step.cycles}, (step.container,), (), step.requires_sealed)]
    if isinstance(step, SynthesisCycleStep):
        return _lower_synthesis_cycle(step)
    raise CompileError(f"no lowering for step kind '{step.kind}'")


def _check_bindable(reg: Registry, label: str, tag: str, params: Dict) -> None:
    candidates = services_with_capability(reg, tag)
    if not candidates:
        raise NoCapableInstrumentError(label, tag)
    if capable_services(reg, tag, params):
        return
    for name, value in params.items():
        if not any(svc.accepts({name: value}) for svc in candidates):
            raise ParamOutOfRangeError(label, name)
    # every parameter fits some service, but never all on the same one
    raise ParamOutOfRangeError(label, ",".join(sorted(params)))


def compile_procedure(
    p: Procedure,
    reg: Registry,
    request_id: str,
    program_id: Optional[str] = None,
    submit_time: float = 0.0,
) -> Program:
    """
    Lower a procedure into a chain-ordered program.

    Args:
        p: procedure with parameters resolved from its params map
        reg: registry used to validate capabilities and parameter ranges
        request_id: owning request
        program_id: defaults to "<request_id>:<procedure_id>"
        submit_time: request submission time in minutes

    Returns:
        Program with dense, topologically ordered invocation ids
    """
    invocations: List[Invocation] = []
    for index, step in enumerate(p.resolved_steps()):
        label = f"step {index} ({step.kind})"
        for tag, params, reads, writes, sealed in lower_step(step):
            _check_bindable(reg, label, tag, params)
            inv_id = len(invocations)
            invocations.append(Invocation(
                invocation_id=inv_id,
                capability=tag,
                params=params,
                reads=reads,
                writes=writes,
                depends_on=(inv_id - 1,) if inv_id else (),
                requires_sealed=sealed,
                step_index=index,
                step_kind=step.kind,
                sources=(f"{request_id}#{inv_id}",),
            ))

    program = Program(
        program_id=program_id or f"{request_id}:{p.procedure_id}",
        request_id=request_id,
        task=p.task,
        provenance=p.procedure_id,
        params=dict(p.params),
        submit_time=submit_time,
        invocations=tuple(invocations),
    )
    if not is_dag(program):
        raise CompileError(f"compiled program {program.program_id} has a dependency cycle")
    if not is_topologically_ordered(program):
        raise CompileError(f"compiled program {program.program_id} is not numbered in dependency order")
    logger.debug(f"Compiled {p.procedure_id} -> {len(invocations)} invocations")
    return program


# ==================== Graph helpers ====================

def program_graph(prog: Program) -> nx.DiGraph:
    graph = nx.DiGraph()
    for inv in prog.invocations:
        graph.add_node(inv.invocation_id)
        for dep in inv.depends_on:
            graph.add_edge(dep, inv.invocation_id)
    return graph


def is_dag(prog: Program) -> bool:
    return nx.is_directed_acyclic_graph(program_graph(prog))


def is_topologically_ordered(prog: Program) -> bool:
    ids_dense = [inv.invocation_id for inv in prog.invocations] == list(range(len(prog.invocations)))
    return ids_dense and all(dep < inv.invocation_id for inv in prog.invocations for dep in inv.depends_on)


def critical_path(prog: Program) -> float:
    """Longest dependency chain in minutes, weighting each node by est_duration."""
    graph = program_graph(prog)
    finish: Dict[int, float] = {}
    for node in nx.topological_sort(graph):
        inv = prog.invocation(node)
        if inv.est_duration is None:
            raise CompileError(f"invocation {node} of {prog.program_id} has no duration estimate")
        start = max((finish[d] for d in graph.predecessors(node)), default=0.0)
        finish[node] = start + inv.est_duration
    return round(max(finish.values(), default=0.0), 1)


def bind_and_estimate(prog: Program, reg: Registry) -> Program:
    """Fill est_duration from the cheapest capable service (service_id tie-break)."""
    bound = []
    for inv in prog.invocations:
        services = capable_services(reg, inv.capability, inv.params)
        if not services:
            raise NoCapableInstrumentError(f"invocation {inv.invocation_id}", inv.capability)
        bound.append(inv.model_copy(update={"est_duration": to_minutes(services[0].ticks(inv.params))}))
    return prog.model_copy(update={"invocations": tuple(bound)})


# ==================== Dump format ====================

def _format_value(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, float)):
        return f"{value:g}"
    return str(value)


def format_invocation(inv: Invocation) -> str:
    params = ",".join(f"{k}={_format_value(v)}" for k, v in sorted(inv.params.items())) or "-"
    deps = ",".join(str(d) for d in sorted(inv.depends_on)) or "-"
    return f"{inv.invocation_id} | {inv.capability} | {params} | {deps}"


def dump_program(prog: Program) -> str:
    """Line-oriented dump: `id | capability | params | deps`, newline terminated."""
    return "".join(format_invocation(inv) + "\n" for inv in prog.invocations)
