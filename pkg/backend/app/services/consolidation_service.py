"""Merge compatible invocations of independent programs into shared operations."""
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Set, Tuple
import logging

from app.config import settings
from app.core.exceptions import IncompatibleProgramsError
from app.schemas.instrument import Registry
from app.schemas.procedure import Container
from app.schemas.program import Invocation, Program
from app.services.registry_service import services_with_capability

logger = logging.getLogger(__name__)

# Rows reserved per request when relocating working containers on the bench
ROWS_PER_SLOT = 8
ARRAY_ZONE = "array"


def working_containers(prog: Program) -> List[Container]:
    """Containers the program writes to, in deck order."""
    written = {c for inv in prog.invocations for c in inv.writes}
    return sorted(written, key=Container.sort_key)


def remap_containers(prog: Program, mapping: Dict[Container, Container]) -> Program:
    if not mapping:
        return prog

    def swap(containers: Tuple[Container, ...]) -> Tuple[Container, ...]:
        return tuple(mapping.get(c, c) for c in containers)

    invocations = tuple(
        inv.model_copy(update={"reads": swap(inv.reads), "writes": swap(inv.writes)})
        for inv in prog.invocations
    )
    return prog.model_copy(update={"invocations": invocations})


def relocate_program(prog: Program, slot: int) -> Program:
    """Move a program's working containers to the rows reserved for `slot`.

    Reagent reservoirs (read, never written) stay shared.
    """
    mapping = {
        c: Container(zone=c.zone, row=c.row + slot * ROWS_PER_SLOT, col=c.col)
        for c in working_containers(prog)
    }
    return remap_containers(prog, mapping)


def _check_disjoint(progs: Sequence[Program]) -> None:
    owner: Dict[Container, str] = {}
    for prog in progs:
        for c in working_containers(prog):
            if c in owner and owner[c] != prog.program_id:
                raise IncompatibleProgramsError(
                    f"{prog.program_id} and {owner[c]} both write {c}"
                )
            owner[c] = prog.program_id


def _array_layout(progs: Sequence[Program]) -> List[Program]:
    """Lay every program's working containers on a horizontal tube array.

    Program k takes column k % PLATE_COLUMNS; its i-th working container sits
    on row (k // PLATE_COLUMNS) * width + i.
    """
    width = max((len(working_containers(p)) for p in progs), default=0)
    columns = settings.PLATE_COLUMNS
    laid_out = []
    for k, prog in enumerate(progs):
        mapping = {
            c: Container(zone=ARRAY_ZONE, row=(k // columns) * width + i, col=k % columns)
            for i, c in enumerate(working_containers(prog))
        }
        laid_out.append(remap_containers(prog, mapping))
    return laid_out


def _channel_limit(reg: Registry, inv: Invocation) -> int:
    """Smallest channel count among instruments able to run the transfer."""
    limits = [
        reg.instruments[svc.instrument_id].channels
        for svc in services_with_capability(reg, inv.capability)
        if svc.accepts(inv.params)
    ]
    return min(limits, default=1)


def _params_key(inv: Invocation) -> Tuple:
    return tuple(sorted((k, str(v)) for k, v in inv.params.items()))


def _single_row(inv: Invocation) -> Optional[Tuple[str, int]]:
    rows = {(c.zone, c.row) for c in inv.containers}
    if len(rows) > 1:
        return None
    return next(iter(rows), ("", -1))


def _group_ready(
    ready: List[Tuple[int, Invocation]],
    reg: Registry,
) -> List[List[Tuple[int, Invocation]]]:
    """Partition one frontier round into merge groups, in first-seen order."""
    groups: "OrderedDict[Tuple, List[Tuple[int, Invocation]]]" = OrderedDict()
    singles = []
    for k, inv in ready:
        if inv.capability == "liquid.transfer":
            key = ("transfer", _params_key(inv), inv.reads)
            groups.setdefault(key, []).append((k, inv))
            continue
        row = _single_row(inv)
        if row is None:
            singles.append([(k, inv)])
            continue
        key = ("op", inv.capability, _params_key(inv), row)
        groups.setdefault(key, []).append((k, inv))

    merged: List[List[Tuple[int, Invocation]]] = []
    for key, members in groups.items():
        if key[0] != "transfer":
            merged.append(members)
            continue
        merged.extend(_split_transfer_group(members, _channel_limit(reg, members[0][1])))
    return merged + singles


def _split_transfer_group(
    members: List[Tuple[int, Invocation]],
    channels: int,
) -> List[List[Tuple[int, Invocation]]]:
    """Destinations must be consecutive columns of one row, at most `channels` wide."""
    by_row: "OrderedDict[Tuple, List[Tuple[int, Invocation]]]" = OrderedDict()
    for k, inv in members:
        if len(inv.writes) != 1:
            by_row.setdefault(("multi", k, inv.invocation_id), []).append((k, inv))
            continue
        dst = inv.writes[0]
        by_row.setdefault((dst.zone, dst.row), []).append((k, inv))

    chunks = []
    for row_members in by_row.values():
        row_members.sort(key=lambda m: (m[1].writes[0].col if m[1].writes else 0, m[0]))
        run: List[Tuple[int, Invocation]] = []
        for member in row_members:
            if run and (
                len(run) == channels
                or not member[1].writes
                or member[1].writes[0].col != run[-1][1].writes[0].col + 1
            ):
                chunks.append(run)
                run = []
            run.append(member)
        if run:
            chunks.append(run)
    return chunks


def consolidate(progs: Sequence[Program], reg: Registry) -> Program:
    """
    Merge invocations of independent programs in lockstep frontier rounds.

    Each round takes every invocation whose dependencies were emitted in
    earlier rounds, merges compatible ones and emits them. Transfers merge on
    (reagent, volume, source) when destinations form a consecutive run of
    columns; other invocations merge on identical capability and params when
    all their containers share one row.
    The merged program is released at the latest submit time of its members.

    Raises:
        IncompatibleProgramsError: two programs write the same container
    """
    progs = list(progs)
    if len(progs) <= 1:
        return progs[0] if progs else Program(program_id="empty", request_id="")

    _check_disjoint(progs)
    progs = _array_layout(progs)

    emitted: Dict[Tuple[int, int], int] = {}
    pending: List[Set[int]] = [{inv.invocation_id for inv in p.invocations} for p in progs]
    merged: List[Invocation] = []

    while any(pending):
        ready = [
            (k, prog.invocation(i))
            for k, prog in enumerate(progs)
            for i in sorted(pending[k])
            if all((k, d) in emitted for d in prog.invocation(i).depends_on)
        ]
        if not ready:
            raise IncompatibleProgramsError("dependency cycle while consolidating")

        for group in _group_ready(ready, reg):
            new_id = len(merged)
            first = group[0][1]
            deps = sorted({emitted[(k, d)] for k, inv in group for d in inv.depends_on})
            merged.append(first.model_copy(update={
                "invocation_id": new_id,
                "reads": tuple(sorted({c for _, inv in group for c in inv.reads}, key=Container.sort_key)),
                "writes": tuple(sorted({c for _, inv in group for c in inv.writes}, key=Container.sort_key)),
                "depends_on": tuple(deps),
                "requires_sealed": any(inv.requires_sealed for _, inv in group),
                "merged_count": sum(inv.merged_count for _, inv in group),
                "sources": tuple(s for _, inv in group for s in inv.sources),
                "est_duration": None,
            }))
            for k, inv in group:
                emitted[(k, inv.invocation_id)] = new_id
                pending[k].discard(inv.invocation_id)

    request_ids = list(dict.fromkeys(r for p in progs for r in p.request_ids))
    result = Program(
        program_id="+".join(p.program_id for p in progs),
        request_id="+".join(request_ids),
        task=progs[0].task if len({p.task for p in progs}) == 1 else "mixed",
        provenance="+".join(dict.fromkeys(p.provenance for p in progs)),
        params={},
        submit_time=max(p.submit_time for p in progs),
        invocations=tuple(merged),
    )
    original = sum(len(p.invocations) for p in progs)
    logger.info(f"Consolidated {len(progs)} programs: {original} -> {len(merged)} invocations")
    return result
