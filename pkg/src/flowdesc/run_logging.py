import logging
from logging import LogRecord, StreamHandler
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel

RECORD_ATTRIBUTE = "record"
CONSOLE_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


class JsonLinesHandler(StreamHandler):
    """Writes the pydantic model attached as `extra={"record": model}` as one JSON line per log call.

    Records without a model payload are ignored, so the handler can sit on a shared logger.
    """

    def __init__(self, path: Union[str, Path], flush_every: int = 50, truncate: bool = True) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        super().__init__(open(self.path, "w" if truncate else "a", encoding="utf-8"))
        self.flush_every = flush_every
        self.buffer: List[BaseModel] = []

    def emit(self, record: LogRecord) -> None:
        model = getattr(record, RECORD_ATTRIBUTE, None)
        if not isinstance(model, BaseModel):
            return
        self.buffer.append(model)
        if len(self.buffer) >= self.flush_every:
            self.push_records()

    def push_records(self) -> None:
        records = self.buffer
        self.buffer = []
        for model in records:
            self.stream.write(model.json() + "\n")
        self.stream.flush()

    def flush(self) -> None:
        if self.buffer:
            self.push_records()
        super().flush()

    def close(self) -> None:
        self.acquire()
        try:
            if self.stream:
                self.flush()
                self.stream.close()
                self.stream = None  # type: ignore
        finally:
            self.release()
            super().close()


def configure_logging(level: Union[int, str] = logging.INFO, json_path: Optional[Union[str, Path]] = None) -> None:
    root = logging.getLogger()
    root.setLevel(level)
    if not any(getattr(handler, "_flowdesc_console", False) for handler in root.handlers):
        console = logging.StreamHandler()
        console.setFormatter(logging.Formatter(CONSOLE_FORMAT))
        console._flowdesc_console = True  # type: ignore
        root.addHandler(console)
    if json_path is not None:
        root.addHandler(JsonLinesHandler(json_path))
