"""Paint which patches have been merged together, one frame per prune layer."""

from __future__ import annotations

import os

import numpy as np

from .model import ForwardTrace
from .ppm import write_ppm


def palette(n: int, seed: int = 0) -> np.ndarray:
    """``n`` distinct RGB colors, reproducible from ``seed``."""
    codes = np.random.default_rng(seed).choice(1 << 24, size=n, replace=False)
    return np.stack([(codes >> 16) & 255, (codes >> 8) & 255, codes & 255], axis=1).astype(np.uint8)


def group_ids(groups, num_patches: int) -> np.ndarray:
    """Label each patch with the smallest patch id in its group.

    Labelling by the minimum keeps a group's color stable as it absorbs
    others, so coarsening only ever recolors the absorbed patches.
    """
    ids = np.full(num_patches, -1, dtype=np.int64)
    for g in groups:
        if not g:
            continue
        members = np.fromiter(g, dtype=np.int64)
        if (ids[members] != -1).any():
            raise ValueError("patch groups overlap")
        ids[members] = members.min()
    if (ids == -1).any():
        missing = np.flatnonzero(ids == -1)
        raise ValueError(f"{missing.size} patch(es) belong to no group, e.g. {missing[:5].tolist()}")
    return ids


def render_frame(ids: np.ndarray, grid: tuple[int, int], colors: np.ndarray, cell: int = 16) -> np.ndarray:
    gh, gw = grid
    tile = colors[ids].reshape(gh, gw, 3)
    return tile.repeat(cell, axis=0).repeat(cell, axis=1)


def render_merge_trace(trace: ForwardTrace, out_dir, grid: tuple[int, int] = (14, 14),
                       cell: int = 16, palette_seed: int = 0) -> list[str]:
    """Write ``merge_layerNN.ppm`` for every pruning event; return the paths."""
    if not trace.outcomes:
        raise ValueError("trace has no pruning events to render")
    num_patches = grid[0] * grid[1]
    colors = palette(num_patches, palette_seed)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for layer, groups in trace.frames():
        ids = group_ids(groups, num_patches)
        path = os.path.join(os.fspath(out_dir), f"merge_layer{layer:02d}.ppm")
        try:
            write_ppm(path, render_frame(ids, grid, colors, cell))
        except OSError as exc:
            raise OSError(f"could not write {path}: {exc.strerror or exc}") from exc
        paths.append(path)
    return paths
