"""
Result files and human-readable rendering.

Experiment ``NAME`` writes into the output directory:

    NAME_summary.csv       SUMMARY_COLUMNS, one row per (sweep point, baseline, mode)
    NAME_realizations.csv  REALIZATION_COLUMNS, one row per solve
    NAME_timing.csv        TIMING_COLUMNS, mean CPU seconds per summary row
    NAME_time_saved.csv    TIME_SAVED_COLUMNS, when both modes ran
    NAME_power_saving.csv  POWER_SAVING_COLUMNS, power experiment only
    NAME_convergence.csv   CONVERGENCE_COLUMNS, convergence experiment only
    NAME.json              spec, config, summary rows and failure count

Everything except the timing and time-saved files is byte-identical across
runs with the same seed. A single solve writes ``report.json`` and
``trace.csv`` (TRACE_COLUMNS) and, in decentralized mode, ``messages.csv``.
"""
import csv
import json
import logging
import os
from typing import Iterable, List

import attr
import jinja2
import yaml

from fluid_antenna_wsr.solver import BLOCKS, SolverReport

log = logging.getLogger("faw")

HERE = os.path.dirname(os.path.realpath(__file__))
J2_DIR = f"{HERE}/j2_templates"

SUMMARY_COLUMNS = (
    "sweep",
    "value",
    "baseline",
    "mode",
    "realizations",
    "failures",
    "wsr_bits_mean",
    "wsr_bits_stderr",
    "iterations_mean",
    "converged",
    "bisection_iterations_mean",
    "mm_iterations_tx_mean",
    "mm_iterations_rx_mean",
    "restarts_mean",
)
REALIZATION_COLUMNS = (
    "sweep",
    "value",
    "baseline",
    "mode",
    "index",
    "wsr_bits",
    "iterations",
    "converged",
    "bisection_iterations",
    "mm_iterations_tx",
    "mm_iterations_rx",
    "restarts",
    "error",
)
TIMING_COLUMNS = ("sweep", "value", "baseline", "mode", "cpu_time_mean_s")
TIME_SAVED_COLUMNS = (
    "sweep",
    "value",
    "baseline",
    "centralized_s",
    "decentralized_s",
    "time_saved_pct",
)
POWER_SAVING_COLUMNS = ("baseline", "mode", "target_wsr_bits", "power_dbm", "power_saving_db")
CONVERGENCE_COLUMNS = ("iteration", "baseline", "mode", "wsr_bits_mean")
TRACE_COLUMNS = ("iteration", "wsr_bits", "f_quad") + tuple(f"{b}_ms" for b in BLOCKS)


def _to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _to_yaml(obj) -> str:
    # numpy scalars have no safe representer
    return yaml.safe_dump(json.loads(json.dumps(obj)), default_flow_style=False, sort_keys=True)


def _environment() -> jinja2.Environment:
    env = jinja2.Environment(
        loader=jinja2.FileSystemLoader([J2_DIR]),
        undefined=jinja2.StrictUndefined,
        autoescape=False,
    )
    env.filters["to_json"] = _to_json
    env.filters["to_yaml"] = _to_yaml
    return env


JENV = _environment()


def render(kind: str, obj: dict, report_format=None) -> Iterable[str]:
    """Stream a report; ``kind`` names the human template, json/yaml are generic."""
    if report_format == "json":
        template_name = "json.j2"
    elif report_format == "yaml":
        template_name = "yaml.j2"
    else:
        template_name = f"{kind}.j2"
    return JENV.get_template(template_name).generate(obj=obj)


def write_csv(path: str, columns, rows) -> str:
    try:
        with open(path, "w", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(columns)
            writer.writerows(rows)
    except OSError as exc:
        raise type(exc)(exc.errno, f"cannot write {path}: {exc.strerror}", path) from exc
    log.info("wrote %s", path)
    return path


def write_json(path: str, obj) -> str:
    try:
        with open(path, "w") as fp:
            fp.write(_to_json(obj))
            fp.write("\n")
    except OSError as exc:
        raise type(exc)(exc.errno, f"cannot write {path}: {exc.strerror}", path) from exc
    log.info("wrote %s", path)
    return path


def ensure_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise type(exc)(exc.errno, f"cannot create {path}: {exc.strerror}", path) from exc
    return path


def _pick(record: dict, columns) -> list:
    return [record[c] for c in columns]


def summary_rows(result) -> List[list]:
    return [_pick(attr.asdict(row), SUMMARY_COLUMNS) for row in result.rows]


def realization_rows(result) -> List[list]:
    rows = []
    for point, r in result.realization_rows():
        record = attr.asdict(r)
        record.update(sweep=point.sweep, value=point.value, error=r.error or "")
        rows.append(_pick(record, REALIZATION_COLUMNS))
    return rows


def experiment_summary(result) -> dict:
    """Seed-deterministic summary; timing lives in the timing CSVs only."""
    return {
        "experiment": result.name,
        "modes": list(result.modes),
        "spec": attr.asdict(result.spec),
        "config": attr.asdict(result.config),
        "failures": result.failures,
        "rows": [dict(zip(SUMMARY_COLUMNS, row)) for row in summary_rows(result)],
        "power_saving": result.extras.get("power_saving", []),
    }


def emit_outputs(result, out_dir: str) -> List[str]:
    ensure_dir(out_dir)
    base = os.path.join(out_dir, result.name)
    written = [
        write_csv(f"{base}_summary.csv", SUMMARY_COLUMNS, summary_rows(result)),
        write_csv(f"{base}_realizations.csv", REALIZATION_COLUMNS, realization_rows(result)),
        write_csv(
            f"{base}_timing.csv",
            TIMING_COLUMNS,
            [[r.sweep, r.value, r.baseline, r.mode, r.cpu_time_mean] for r in result.rows],
        ),
    ]
    if "time_saved" in result.extras:
        written.append(
            write_csv(
                f"{base}_time_saved.csv",
                TIME_SAVED_COLUMNS,
                [_pick(row, TIME_SAVED_COLUMNS) for row in result.extras["time_saved"]],
            )
        )
    if "power_saving" in result.extras:
        written.append(
            write_csv(
                f"{base}_power_saving.csv",
                POWER_SAVING_COLUMNS,
                [_pick(row, POWER_SAVING_COLUMNS) for row in result.extras["power_saving"]],
            )
        )
    if result.name == "convergence":
        written.append(
            write_csv(
                f"{base}_convergence.csv",
                CONVERGENCE_COLUMNS,
                [list(row) for row in result.convergence_rows()],
            )
        )
    written.append(write_json(f"{base}.json", experiment_summary(result)))
    return written


def emit_solve(report: SolverReport, out_dir: str) -> List[str]:
    ensure_dir(out_dir)
    written = [
        write_json(os.path.join(out_dir, "report.json"), report.to_dict()),
        write_csv(os.path.join(out_dir, "trace.csv"), TRACE_COLUMNS, report.trace_rows()),
    ]
    if report.message_log is not None:
        path = os.path.join(out_dir, "messages.csv")
        try:
            report.message_log.write_csv(path)
        except OSError as exc:
            raise type(exc)(exc.errno, f"cannot write {path}: {exc.strerror}", path) from exc
        log.info("wrote %s", path)
        written.append(path)
    return written
