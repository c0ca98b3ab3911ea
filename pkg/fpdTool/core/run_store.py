"""
Run report persistence

Reports are flattened into dotted key/value records and stored in one
`run_record` table, one run index per stored report.
"""

import json
import logging
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from sqlalchemy import DateTime, Integer, String, Text, create_engine, delete, func, select
from sqlalchemy.orm import DeclarativeBase, Mapped, Session, mapped_column

from .properties_config import get_properties_config

logger = logging.getLogger(__name__)


class Base(DeclarativeBase):
    pass


class RunRecord(Base):
    __tablename__ = "run_record"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    run_index: Mapped[int] = mapped_column(Integer, index=True)
    kind: Mapped[str] = mapped_column(String(32))
    key: Mapped[str] = mapped_column(String(255))
    value: Mapped[str] = mapped_column(Text)
    created_at: Mapped[datetime] = mapped_column(DateTime)


class RunStore:
    """Store and retrieve flattened run reports"""

    def __init__(self, url: Optional[str] = None):
        """
        Args:
            url: SQLAlchemy URL, defaults to app.database.url of the properties file
        """
        self.url = url or get_properties_config().get_database_url()
        try:
            self.engine = create_engine(self.url, future=True)
            Base.metadata.create_all(self.engine)
            logger.info(f"Run store ready: {self.engine.url.render_as_string(hide_password=True)}")
        except Exception as e:
            logger.error(f"Failed to open run store: {e}")
            raise

    def store_report(self, kind: str, report: Dict[str, Any]) -> int:
        """
        Store a JSON report

        Returns:
            run_index: the index of the stored run
        """
        flattened = self._flatten_json(report)
        now = datetime.now(timezone.utc).replace(tzinfo=None)
        with Session(self.engine) as session, session.begin():
            last = session.scalar(select(func.max(RunRecord.run_index)))
            run_index = (last or 0) + 1
            session.add_all([
                RunRecord(run_index=run_index, kind=kind, key=key, value=json.dumps(value), created_at=now)
                for key, value in flattened.items()
            ])
        logger.info(f"Stored {kind} report as run {run_index}, {len(flattened)} records")
        return run_index

    def _flatten_json(self, data: Any, parent_key: str = '') -> Dict[str, Any]:
        """
        Flatten JSON data into key-value pairs

        Args:
            data: JSON data to flatten
            parent_key: Parent key for nested objects

        Returns:
            Flattened dictionary, keys like "loop.first_violation_m[0]"
        """
        items = []
        if isinstance(data, dict):
            for key, value in data.items():
                new_key = f"{parent_key}.{key}" if parent_key else key
                if isinstance(value, (dict, list)) and value:
                    items.extend(self._flatten_json(value, new_key).items())
                else:
                    items.append((new_key, value))
        elif isinstance(data, list):
            for i, value in enumerate(data):
                new_key = f"{parent_key}[{i}]" if parent_key else f"[{i}]"
                if isinstance(value, (dict, list)) and value:
                    items.extend(self._flatten_json(value, new_key).items())
                else:
                    items.append((new_key, value))
        else:
            items.append((parent_key, data))
        return dict(items)

    def get_report(self, run_index: int) -> Dict[str, Any]:
        """
        Retrieve a stored run

        Returns:
            {"run_index", "kind", "created_at", "data": flattened key/value dict}, {} if unknown
        """
        with Session(self.engine) as session:
            rows = session.scalars(
                select(RunRecord).where(RunRecord.run_index == run_index).order_by(RunRecord.id)).all()
            if not rows:
                return {}
            return {
                "run_index": run_index,
                "kind": rows[0].kind,
                "created_at": rows[0].created_at.isoformat(),
                "data": {row.key: json.loads(row.value) for row in rows},
            }

    def list_runs(self) -> List[Dict[str, Any]]:
        with Session(self.engine) as session:
            rows = session.execute(
                select(RunRecord.run_index, RunRecord.kind, func.count(RunRecord.id))
                .group_by(RunRecord.run_index, RunRecord.kind)
                .order_by(RunRecord.run_index)).all()
        return [{"run_index": idx, "kind": kind, "record_count": count} for idx, kind, count in rows]

    def delete_run(self, run_index: int) -> bool:
        with Session(self.engine) as session, session.begin():
            result = session.execute(delete(RunRecord).where(RunRecord.run_index == run_index))
            removed = result.rowcount
        logger.info(f"Deleted run {run_index}, {removed} records removed")
        return removed > 0

    def close(self):
        self.engine.dispose()
        logger.info("Run store closed")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
