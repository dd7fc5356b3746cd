import csv
import io
import json
import logging
import os
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Optional, TextIO, Union

from src.chase_phase.common import LOGGER_NAME, format_real, to_jsonable, version_stamp

logger = logging.getLogger(LOGGER_NAME)

STDOUT_MARKER: str = "-"


class ResultStorage:
    """
    Writes result documents either to files or to standard output.

    Paths are resolved against ``root`` when relative. A path of ``None`` or ``"-"`` means
    standard output, so the CLI can be used in pipelines.
    """

    def __init__(self, root: Optional[Union[str, Path]] = None, stream: Optional[TextIO] = None):
        self.root = Path(root) if root else None
        self._stream = stream

    @property
    def stream(self) -> TextIO:
        return self._stream or sys.stdout

    def resolve(self, path: Optional[Union[str, Path]]) -> Optional[Path]:
        """Absolute output path, or None for standard output."""
        if path is None or str(path) == STDOUT_MARKER:
            return None
        path = Path(path)
        if self.root and not path.is_absolute():
            path = self.root / path
        return path

    def write_text(self, path: Optional[Union[str, Path]], content: str, encoding: str = "utf-8") -> str:
        """
        Write text content to a file or to standard output.

        Args:
            path: Target path, or None / "-" for standard output
            content: Text content to write
            encoding: Text encoding to use

        Returns:
            Full path of the written file, or "-" for standard output
        """
        target = self.resolve(path)
        if target is None:
            self.stream.write(content)
            self.stream.flush()
            return STDOUT_MARKER
        os.makedirs(target.parent, exist_ok=True)
        # newline="" keeps \n line endings on every platform
        with open(target, "w", encoding=encoding, newline="") as f:
            f.write(content)
        logger.info(f"Wrote {target}")
        return str(target)

    def read_text(self, path: Union[str, Path], encoding: str = "utf-8") -> str:
        target = self.resolve(path)
        if target is None:
            raise ValueError("cannot read results back from standard output")
        with open(target, encoding=encoding) as f:
            return f.read()

    def write_json(self, path: Optional[Union[str, Path]], data: Any, indent: int = 2) -> str:
        """
        Write a JSON document with sorted keys and stable number text.

        A ``version`` key is added when the document is a dict without one.
        """
        payload = to_jsonable(data)
        if isinstance(payload, dict) and "version" not in payload:
            payload["version"] = version_stamp()
        json_str = json.dumps(payload, indent=indent, sort_keys=True, ensure_ascii=False) + "\n"
        return self.write_text(path, json_str)

    def read_json(self, path: Union[str, Path]) -> Any:
        return json.loads(self.read_text(path))

    def write_csv(
        self,
        path: Optional[Union[str, Path]],
        rows: list[dict],
        columns: Optional[list[str]] = None,
        comments: Optional[dict] = None,
    ) -> str:
        """
        Write rows as CSV, numbers rendered with ``format_real``.

        :param columns: column order; defaults to the keys of the first row
        :param comments: written first as ``# key: value`` lines (run configuration, version)
        """
        columns = columns or (list(rows[0].keys()) if rows else [])
        buffer = io.StringIO()
        for key, value in sorted((comments or {}).items()):
            buffer.write(f"# {key}: {value}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(column)) for column in columns])
        return self.write_text(path, buffer.getvalue())


def _cell(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, Enum):
        return str(value.value)
    return format_real(value)
