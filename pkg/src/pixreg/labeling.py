"""Breadth-first flood-fill labeling of binary images."""
from __future__ import annotations

from collections import deque

import numpy as np

_OFFSETS = {
    4: [(-1, 0), (1, 0), (0, -1), (0, 1)],
    8: [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
}


def label_components(b, connectivity=8) -> tuple[np.ndarray, int]:
    """Label the connected True regions of ``b``.

    ``connectivity`` is 4, 8 or an explicit symmetric list of (dr, dc)
    neighbour offsets. Returns an int array (0 = background, 1..k =
    components in scan order of their first pixel) and the count k.
    """
    b = np.asarray(b, dtype=bool)
    offsets = _OFFSETS[connectivity] if isinstance(connectivity, int) else list(connectivity)
    rows, cols = b.shape
    labels = np.zeros(b.shape, dtype=np.int64)
    count = 0
    for r0, c0 in zip(*np.nonzero(b)):
        if labels[r0, c0]:
            continue
        count += 1
        labels[r0, c0] = count
        queue = deque([(r0, c0)])
        while queue:
            r, c = queue.popleft()
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols and b[rr, cc] and not labels[rr, cc]:
                    labels[rr, cc] = count
                    queue.append((rr, cc))
    return labels, count


def count_components(b, connectivity=8) -> int:
    return label_components(b, connectivity)[1]


def component_sizes(b, connectivity=8) -> np.ndarray:
    labels, count = label_components(b, connectivity)
    return np.bincount(labels.ravel(), minlength=count + 1)[1:]


def is_hole_free(b) -> bool:
    """True when the background forms one 4-connected region touching the border.

    An all-foreground image (no background at all) also counts as hole-free.
    """
    bg = ~np.asarray(b, dtype=bool)
    if not bg.any():
        return True
    labels, count = label_components(bg, 4)
    if count != 1:
        return False
    border = np.concatenate([bg[0], bg[-1], bg[:, 0], bg[:, -1]])
    return bool(border.any())
