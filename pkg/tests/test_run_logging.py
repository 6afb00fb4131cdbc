import json
import logging
from pathlib import Path
from typing import Generator

import pytest

from flowdesc.formats.models import SkipRecordModel
from flowdesc.run_logging import JsonLinesHandler, configure_logging


@pytest.fixture
def records_logger() -> Generator[logging.Logger, None, None]:
    logger = logging.getLogger("flowdesc.tests.records")
    logger.setLevel(logging.INFO)
    logger.propagate = False
    yield logger
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


def _lines(path: Path) -> list:
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_records_are_buffered_until_flush(tmp_path: Path, records_logger: logging.Logger) -> None:
    handler = JsonLinesHandler(tmp_path / "log.jsonl", flush_every=3)
    records_logger.addHandler(handler)

    for index in range(2):
        records_logger.info("skip", extra={"record": SkipRecordModel(epoch=0, pair=f"p{index}", reason="empty")})
    assert _lines(tmp_path / "log.jsonl") == []

    records_logger.info("skip", extra={"record": SkipRecordModel(epoch=0, pair="p2", reason="empty")})
    assert [line["pair"] for line in _lines(tmp_path / "log.jsonl")] == ["p0", "p1", "p2"]


def test_plain_messages_are_ignored(tmp_path: Path, records_logger: logging.Logger) -> None:
    handler = JsonLinesHandler(tmp_path / "log.jsonl")
    records_logger.addHandler(handler)
    records_logger.info("no payload")
    records_logger.info("skip", extra={"record": SkipRecordModel(epoch=1, pair="a->b", reason="empty mask")})
    handler.close()

    assert _lines(tmp_path / "log.jsonl") == [{"kind": "skip", "epoch": 1, "pair": "a->b", "reason": "empty mask"}]


def test_append_mode_keeps_earlier_lines(tmp_path: Path) -> None:
    path = tmp_path / "runs" / "log.jsonl"
    for epoch, truncate in ((0, True), (1, False)):
        handler = JsonLinesHandler(path, truncate=truncate)
        handler.emit(
            logging.makeLogRecord({"record": SkipRecordModel(epoch=epoch, pair="a->b", reason="no correspondences")})
        )
        handler.close()

    assert [line["epoch"] for line in _lines(path)] == [0, 1]


def test_console_handler_is_added_once(tmp_path: Path) -> None:
    root = logging.getLogger()
    before = list(root.handlers)
    try:
        configure_logging("DEBUG")
        configure_logging("INFO", json_path=tmp_path / "events.jsonl")
        added = [handler for handler in root.handlers if handler not in before]

        assert root.level == logging.INFO
        assert sum(isinstance(handler, JsonLinesHandler) for handler in added) == 1
        assert len([handler for handler in root.handlers if getattr(handler, "_flowdesc_console", False)]) == 1
    finally:
        for handler in root.handlers[:]:
            if handler not in before:
                root.removeHandler(handler)
                handler.close()
