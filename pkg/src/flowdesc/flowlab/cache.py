import hashlib
import json
import logging
from pathlib import Path
from typing import Callable, Union

from flowdesc.flowlab.flow import FlowField
from flowdesc.formats.binary import read_flo, write_flo
from flowdesc.frames import FrameKey
from flowdesc.settings import FlowSettings

logger = logging.getLogger(__name__)


def flow_settings_hash(settings: FlowSettings) -> str:
    canonical = json.dumps(json.loads(settings.json(exclude={"cache"})), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


class FlowCache:
    """On-disk flow store keyed by (dataset, backend, flow settings hash, frame pair).

    `dataset_token` separates datasets that share a run directory; frame names alone repeat across datasets.
    """

    def __init__(
        self, root: Union[str, Path], settings: FlowSettings, dataset_token: str, enabled: bool = True
    ) -> None:
        if not dataset_token:
            raise ValueError("Flow cache needs a non-empty dataset token")
        self.settings = settings
        self.enabled = enabled
        self.directory = Path(root) / dataset_token / f"{settings.backend.value}-{flow_settings_hash(settings)}"

    def path(self, source: FrameKey, target: FrameKey) -> Path:
        return self.directory / f"{source.name}_{target.name}.flo"

    def get_or_compute(self, source: FrameKey, target: FrameKey, compute: Callable[[], FlowField]) -> FlowField:
        path = self.path(source, target)
        if self.enabled and path.exists():
            logger.debug(f"Flow cache hit {path}")
            return FlowField(read_flo(path), self.settings.backend.value)

        flow = compute()
        if self.enabled:
            write_flo(path, flow.data)
        return flow
