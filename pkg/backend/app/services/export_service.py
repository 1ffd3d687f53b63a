"""Run artifacts: trace/utilization/journal CSVs, the journal and the run manifest."""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence
import logging

import pandas as pd
import yaml

from app.schemas.schedule import EventTrace, UtilizationReport, to_minutes
from app.services.metrics_service import format_utilization

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.4f"

TRACE_COLUMNS = ["time_tick", "event_kind", "request_id", "invocation_id", "instrument_id", "service_id"]
UTILIZATION_COLUMNS = ["instrument_id", "busy_ticks", "busy_min", "ratio"]
JOURNAL_COLUMNS = ["request_id", "iteration", "procedure_id", "params", "stepwise_yield", "time_min", "decision"]


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
    return path


def trace_frame(trace: EventTrace) -> pd.DataFrame:
    rows = [
        {
            "time_tick": e.time_tick,
            "event_kind": e.event_kind.value,
            "request_id": e.request_id,
            "invocation_id": e.invocation_id,
            "instrument_id": e.instrument_id,
            "service_id": e.service_id,
        }
        for e in trace.events
    ]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def utilization_frame(report: UtilizationReport) -> pd.DataFrame:
    rows = [
        {
            "instrument_id": instrument_id,
            "busy_ticks": report.busy[instrument_id],
            "busy_min": to_minutes(report.busy[instrument_id]),
            "ratio": ratio,
        }
        for instrument_id, ratio in report.ratios.items()
    ]
    return pd.DataFrame(rows, columns=UTILIZATION_COLUMNS)


def _format_params(params: Dict[str, Any]) -> str:
    return ";".join(f"{k}={v:g}" if isinstance(v, (int, float)) else f"{k}={v}" for k, v in sorted(params.items()))


def journal_frame(journal: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    rows = [{**entry, "params": _format_params(entry["params"])} for entry in journal]
    return pd.DataFrame(rows, columns=JOURNAL_COLUMNS)


def export_run(
    out_dir: Path,
    trace: EventTrace,
    report: UtilizationReport,
    manifest: Dict[str, Any],
    journal: Optional[List[Dict[str, Any]]] = None,
) -> Dict[str, str]:
    """
    Write every artifact of one run into `out_dir`.

    Returns:
        artifact name -> path, also recorded in the manifest
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {
        "trace": _write_csv(trace_frame(trace), out_dir / "trace.csv"),
        "utilization": _write_csv(utilization_frame(report), out_dir / "utilization.csv"),
    }
    text_report = out_dir / "utilization.txt"
    text_report.write_text(format_utilization(report))
    artifacts["utilization_report"] = text_report

    if journal:
        artifacts["journal_csv"] = _write_csv(journal_frame(journal), out_dir / "journal.csv")
        journal_path = out_dir / "journal.yaml"
        journal_path.write_text(yaml.safe_dump(list(journal), sort_keys=False))
        artifacts["journal"] = journal_path

    artifacts["manifest"] = out_dir / "manifest.yaml"
    paths = {name: str(path) for name, path in artifacts.items()}
    write_manifest(artifacts["manifest"], {**manifest, "artifacts": paths})
    logger.info(f"Wrote {len(paths)} artifacts to {out_dir}")
    return paths


def write_manifest(path: Path, manifest: Dict[str, Any]) -> Path:
    path.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return path


def read_manifest(path: Path) -> Dict[str, Any]:
    return yaml.safe_load(path.read_text()) or {}
