import json
import logging
from pathlib import Path
from typing import Iterable, Iterator, List, Optional

import aiofiles

from database.metrics import MetricsStore
from errors import IoError
from services.ids import LogEntry, format_log_tsv
from services.metrics_service import RunSummary
from utils.formatters import format_us

CALLS_COLUMNS = ("call_id", "t_invite_rx_ms", "t_invite_tx_ms", "setup_latency_ms", "orig", "term", "outcome")
CPU_COLUMNS = ("t_ms", "pouch_id", "utilization", "concurrent_calls")
MEDIA_COLUMNS = ("call_id", "frame_k", "offset_ms")

REPORT_FILES = ("calls.csv", "cpu.csv", "media.csv", "summary.json", "unity.log.tsv")
CHUNK_ROWS = 20000


def _csv_line(cells: Iterable) -> str:
    return ",".join(str(c) for c in cells) + "\n"


def calls_rows(store: MetricsStore) -> Iterator[str]:
    yield _csv_line(CALLS_COLUMNS)
    for record in store.calls.values():
        if not record.in_window:
            continue
        yield _csv_line((
            record.call_id,
            format_us(record.t_invite_rx_us),
            format_us(record.t_invite_tx_us),
            format_us(record.setup_latency_us),
            record.caller,
            record.callee,
            record.outcome,
        ))


def cpu_rows(store: MetricsStore) -> Iterator[str]:
    yield _csv_line(CPU_COLUMNS)
    for sample in store.cpu:
        yield _csv_line((format_us(sample.t_us), sample.pouch_id, f"{sample.utilization:.6f}",
                         sample.concurrent_calls))


def media_rows(store: MetricsStore) -> Iterator[str]:
    yield _csv_line(MEDIA_COLUMNS)
    for call_id, trace in store.media.items():
        for k, offset in trace.samples():
            yield f"{call_id},{k},{format_us(offset)}\n"


def summary_json(summary: RunSummary) -> str:
    return json.dumps(summary.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class ReportService:
    """Запись результатов прогона в каталог"""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.logger = logging.getLogger(__name__)

    async def _write_lines(self, name: str, lines: Iterable[str]) -> Path:
        path = self.out_dir / name
        try:
            async with aiofiles.open(path, "w", encoding="utf-8", newline="\n") as f:
                chunk: List[str] = []
                for line in lines:
                    chunk.append(line)
                    if len(chunk) >= CHUNK_ROWS:
                        await f.write("".join(chunk))
                        chunk.clear()
                if chunk:
                    await f.write("".join(chunk))
        except OSError as e:
            self.logger.error(f"Ошибка при записи {path}: {e}")
            raise IoError(f"Не удалось записать {path}: {e}")
        return path

    async def write_text(self, name: str, text: str) -> Path:
        return await self._write_lines(name, [text])

    async def emit_report(self, store: MetricsStore, summary: RunSummary,
                          log_entries: Optional[Iterable[LogEntry]] = None) -> List[Path]:
        """calls.csv, cpu.csv, media.csv, summary.json и unity.log.tsv"""
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoError(f"Не удалось создать каталог {self.out_dir}: {e}")
        paths = [
            await self._write_lines("calls.csv", calls_rows(store)),
            await self._write_lines("cpu.csv", cpu_rows(store)),
            await self._write_lines("media.csv", media_rows(store)),
            await self.write_text("summary.json", summary_json(summary)),
            await self.write_text("unity.log.tsv", format_log_tsv(log_entries or [])),
        ]
        self.logger.info(f"Отчет записан в {self.out_dir}")
        return paths
