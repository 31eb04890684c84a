# File: seqnet/services/heatmap.py
# Group-to-group weight heat maps of SeqConv layers and their CSV export

from dataclasses import dataclass
from fnmatch import fnmatchcase
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd
import structlog

from seqnet.src.errors import InvalidArgumentError
from seqnet.src.seqconv import SeqConvLayer, input_groups, window_length, window_positions

logger = structlog.get_logger(__name__)

# --- Configuration ---
UNDEFINED = -1.0


@dataclass
class HeatmapMatrix:
    """Rows: target groups x_1..x_g. Columns: source positions 1-min(g_in, g')..g-1.

    -1 marks cells outside the window.
    """

    layer: str
    values: np.ndarray
    positions: List[int]

    @property
    def defined(self) -> np.ndarray:
        return self.values != UNDEFINED


def compute_heatmap(layer: SeqConvLayer, name: str = "") -> HeatmapMatrix:
    """Mean |w| of the kernel slice each F_i applies to each visible source group, max-normalized per row.

    The slice comes from the conv that reads the aggregate: the 3x3 conv of a
    basic transform, the 1x1 conv of a bottleneck.
    """
    cfg, k = layer.cfg, layer.cfg.k
    in_groups = input_groups(cfg, layer.in_channels)
    window = window_length(cfg, layer.in_channels) if cfg.windowed else in_groups + cfg.groups
    # a window shorter than the input hides the oldest input groups from every F_i
    first = 1 - min(in_groups, window)
    positions = list(range(first, cfg.groups))
    values = np.full((cfg.groups, len(positions)), UNDEFINED)

    for i, transform in enumerate(layer.transforms, start=1):
        lo, hi = window_positions(i, window, in_groups)
        weights = np.abs(transform.reading_conv.weight.data.astype(np.float64))
        for j in range(lo, hi + 1):
            offset = (j - lo) * k
            values[i - 1, j - first] = weights[:, offset : offset + k].mean()
        row = values[i - 1, lo - first : hi - first + 1]
        peak = row.max()
        if peak > 0:
            row /= peak
    return HeatmapMatrix(name, values, positions)


def select_layers(layers: Dict[str, SeqConvLayer], selector: str) -> Dict[str, SeqConvLayer]:
    """Layers whose path matches the glob ``selector``, in network order."""
    chosen = {path: layer for path, layer in layers.items() if fnmatchcase(path, selector)}
    if not chosen:
        raise InvalidArgumentError(
            f"heatmap.select_layers: selector '{selector}' matches no layer; available: {', '.join(layers)}"
        )
    return chosen


def heatmap_filename(layer_path: str) -> str:
    return layer_path.replace("/", "_") + ".csv"


def write_heatmap_csv(matrix: HeatmapMatrix, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        matrix.values,
        index=pd.Index([f"x{i}" for i in range(1, matrix.values.shape[0] + 1)], name="target"),
        columns=[str(p) for p in matrix.positions],
    )
    frame.to_csv(path)
    logger.info("heatmap.write_heatmap_csv: heat map written", layer=matrix.layer, path=str(path))
    return path


def read_heatmap_csv(path: Union[str, Path], layer: str = "") -> HeatmapMatrix:
    frame = pd.read_csv(path, index_col=0)
    return HeatmapMatrix(
        layer or Path(path).stem,
        frame.to_numpy(dtype=np.float64),
        [int(column) for column in frame.columns],
    )
