# core/report.py
"""
HTML run reports: a markdown table of the report values rendered with the
markdown package (tables + fenced_code extensions).
"""
from __future__ import annotations

import json
import logging
from datetime import datetime
from pathlib import Path
from string import Template
from typing import Any, Dict, Optional

import markdown

from .properties_config import get_properties_config

logger = logging.getLogger(__name__)

TEMPLATE_PATH = Path(__file__).parent.parent / "data" / "report_template.md"


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (dict, list)):
        return f"`{json.dumps(value)}`"
    return str(value).replace("|", "\\|")


def report_markdown(kind: str, report: Dict[str, Any], config: Optional[Dict[str, Any]] = None) -> str:
    props = get_properties_config()
    rows = ["| Quantity | Value |", "|---|---|"]
    rows += [f"| {key} | {_cell(value)} |" for key, value in report.items()]
    template = Template(TEMPLATE_PATH.read_text(encoding="utf-8"))
    return template.substitute(
        title=f"{kind} report",
        generated=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        app=props.get_app_name(),
        version=props.get_app_version(),
        table="\n".join(rows),
        config=json.dumps(config or {}, indent=2, ensure_ascii=False),
    )


def render_report(kind: str, report: Dict[str, Any], config: Optional[Dict[str, Any]] = None) -> str:
    """HTML body of a run report"""
    return markdown.markdown(report_markdown(kind, report, config), extensions=["tables", "fenced_code"])


def write_report(path, kind: str, report: Dict[str, Any], config: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.write_text(render_report(kind, report, config), encoding="utf-8")
    logger.info(f"Report written: {path}")
    return path
