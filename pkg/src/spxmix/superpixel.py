"""Superpixel partitions: marker grids, marker-based watershed, and SLIC.

The watershed is a Meyer-style priority flood over 4-neighborhoods.
Determinism is pinned down to the tie-break: queue entries are ordered by
``(gradient value, insertion sequence number)``, i.e. FIFO among equal
priorities, with neighbors visited in N, S, W, E order. Every pixel ends
up in exactly one region (no watershed-line pixels); plateau and boundary
pixels go to the first region that claims them.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .imgcore import gradient_for_watershed, require_rgb_u8, rgb_to_lab

NEIGHBORS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))

SLIC_ITERATIONS = 10
DEFAULT_COMPACTNESS = 10.0


@dataclass(frozen=True)
class MarkerGrid:
    """Seed coordinates laid out on a regular grid."""

    positions: tuple[tuple[int, int], ...]
    requested_n: int

    @property
    def actual_n(self) -> int:
        return len(self.positions)


@dataclass
class SuperpixelMap:
    """Per-pixel region ids partitioning an image into ``n`` regions."""

    region_ids: np.ndarray  # (H, W) int32, ids in [0, n)
    n: int

    @property
    def height(self) -> int:
        return self.region_ids.shape[0]

    @property
    def width(self) -> int:
        return self.region_ids.shape[1]

    def region_sizes(self) -> np.ndarray:
        return np.bincount(self.region_ids.ravel(), minlength=self.n)

    def validate(self) -> None:
        """Check the partition invariants: full cover, ids in range,
        every region non-empty and a single 4-connected component."""
        ids = self.region_ids
        if ids.ndim != 2:
            raise ValueError(f"region_ids must be (H, W), got {ids.shape}")
        if ids.min() < 0 or ids.max() >= self.n:
            raise ValueError("region ids out of [0, n)")
        sizes = self.region_sizes()
        if np.any(sizes == 0):
            raise ValueError("empty region id")
        if not _regions_connected(ids, self.n):
            raise ValueError("region is not 4-connected")


def _regions_connected(ids: np.ndarray, n: int) -> bool:
    """Flood-fill check that each id forms one 4-connected component."""
    h, w = ids.shape
    seen = np.zeros((h, w), dtype=bool)
    components = 0
    for r0 in range(h):
        for c0 in range(w):
            if seen[r0, c0]:
                continue
            components += 1
            rid = ids[r0, c0]
            stack = [(r0, c0)]
            seen[r0, c0] = True
            while stack:
                r, c = stack.pop()
                for dr, dc in NEIGHBORS_4:
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < h and 0 <= nc < w and not seen[nr, nc] \
                            and ids[nr, nc] == rid:
                        seen[nr, nc] = True
                        stack.append((nr, nc))
    return components == n


def regular_grid_markers(height: int, width: int, n: int) -> MarkerGrid:
    """Place ~n markers at the cell centers of a regular tiling.

    rows = round(sqrt(n * height / width)) clamped to [1, height], then
    cols = ceil(n / rows) clamped to [1, width]; the grid realizes
    ``actual_n = rows * cols`` markers, which may differ slightly from the
    requested n. Rounding is half-up so the rule is platform-independent.
    """
    if n < 1:
        raise ValueError(f"marker count must be >= 1, got {n}")
    if n > height * width:
        raise ValueError(f"marker count {n} exceeds pixel count {height * width}")

    rows = int(math.floor(math.sqrt(n * height / width) + 0.5))
    rows = min(max(rows, 1), height)
    cols = min(max(math.ceil(n / rows), 1), width)

    positions = tuple(
        (int((i + 0.5) * height / rows), int((j + 0.5) * width / cols))
        for i in range(rows)
        for j in range(cols)
    )
    return MarkerGrid(positions=positions, requested_n=n)


def watershed(gradient: np.ndarray, markers: MarkerGrid) -> SuperpixelMap:
    """Priority-flood the gradient image from the markers.

    Marker i seeds region i. Pixels are claimed in increasing
    ``(gradient value, insertion sequence)`` order; a pixel is labeled the
    moment its first flooded neighbor pushes it, which makes the result a
    full partition with no watershed-line pixels.
    """
    if gradient.ndim != 2:
        raise ValueError(f"gradient must be (H, W), got {gradient.shape}")
    h, w = gradient.shape
    if markers.actual_n < 1:
        raise ValueError("need at least one marker")
    if len(set(markers.positions)) != markers.actual_n:
        raise ValueError("duplicate markers")
    for r, c in markers.positions:
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"marker ({r}, {c}) outside {h}x{w} gradient")

    grad = gradient.astype(np.float64)
    labels = np.full((h, w), -1, dtype=np.int32)

    heap: list[tuple[float, int, int, int]] = []
    seq = 0
    for region, (r, c) in enumerate(markers.positions):
        labels[r, c] = region
        heapq.heappush(heap, (float(grad[r, c]), seq, r, c))
        seq += 1

    while heap:
        _, _, r, c = heapq.heappop(heap)
        region = labels[r, c]
        for dr, dc in NEIGHBORS_4:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and labels[nr, nc] < 0:
                labels[nr, nc] = region
                heapq.heappush(heap, (float(grad[nr, nc]), seq, nr, nc))
                seq += 1

    return SuperpixelMap(region_ids=labels, n=markers.actual_n)


def slic(lab: np.ndarray, n: int, compactness: float = DEFAULT_COMPACTNESS) -> SuperpixelMap:
    """SLIC k-means in (L, a, b, row, col) space.

    Cluster centers start on the regular marker grid and run a fixed 10
    iterations; the spatial term is weighted by ``compactness / S`` with
    S the expected superpixel spacing. A connectivity pass then merges
    orphaned fragments into the nearest adjacent region, so the output
    satisfies the same partition invariants as the watershed.
    """
    if lab.ndim != 3 or lab.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) Lab image, got {lab.shape}")
    if n < 1:
        raise ValueError(f"superpixel count must be >= 1, got {n}")
    if compactness <= 0:
        raise ValueError(f"compactness must be > 0, got {compactness}")

    h, w = lab.shape[:2]
    grid = regular_grid_markers(h, w, n)
    k = grid.actual_n
    lab64 = lab.astype(np.float64)

    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    # feature vector per pixel: (L, a, b, row, col)
    feats = np.concatenate([lab64, rr[..., None], cc[..., None]], axis=-1)

    spacing = math.sqrt(h * w / k)
    spatial_w = compactness / spacing

    centers = np.array(
        [feats[r, c] for r, c in grid.positions], dtype=np.float64
    )

    labels = np.zeros((h, w), dtype=np.int32)
    for _ in range(SLIC_ITERATIONS):
        best = np.full((h, w), np.inf, dtype=np.float64)
        labels.fill(-1)
        for ci in range(k):
            cr, ccol = centers[ci, 3], centers[ci, 4]
            r0 = max(int(cr - 2 * spacing), 0)
            r1 = min(int(cr + 2 * spacing) + 1, h)
            c0 = max(int(ccol - 2 * spacing), 0)
            c1 = min(int(ccol + 2 * spacing) + 1, w)
            window = feats[r0:r1, c0:c1]
            d_lab = np.sum((window[..., :3] - centers[ci, :3]) ** 2, axis=-1)
            d_xy = np.sum((window[..., 3:] - centers[ci, 3:]) ** 2, axis=-1)
            dist = d_lab + d_xy * spatial_w ** 2
            sub_best = best[r0:r1, c0:c1]
            better = dist < sub_best
            sub_best[better] = dist[better]
            labels[r0:r1, c0:c1][better] = ci

        _assign_orphans(labels, feats, centers, spatial_w)

        for ci in range(k):
            sel = labels == ci
            if np.any(sel):
                centers[ci] = feats[sel].mean(axis=0)

    return _enforce_connectivity(labels, k)


def _assign_orphans(labels: np.ndarray, feats: np.ndarray,
                    centers: np.ndarray, spatial_w: float) -> None:
    """Pixels outside every search window get the globally nearest center."""
    orphan = labels < 0
    if not np.any(orphan):
        return
    pts = feats[orphan]
    d_lab = np.sum((pts[:, None, :3] - centers[None, :, :3]) ** 2, axis=-1)
    d_xy = np.sum((pts[:, None, 3:] - centers[None, :, 3:]) ** 2, axis=-1)
    labels[orphan] = np.argmin(d_lab + d_xy * spatial_w ** 2, axis=1)


def _enforce_connectivity(labels: np.ndarray, k: int) -> SuperpixelMap:
    """Split each label into 4-connected components, keep the largest per
    label, and merge every other fragment into an adjacent surviving
    region (largest shared border wins, lowest id on ties). Surviving
    regions are renumbered 0..n-1 in scan order of their first pixel."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int32)
    comp_label: list[int] = []
    comp_size: list[int] = []
    n_comp = 0
    for r0 in range(h):
        for c0 in range(w):
            if comp[r0, c0] >= 0:
                continue
            lab_id = labels[r0, c0]
            stack = [(r0, c0)]
            comp[r0, c0] = n_comp
            size = 0
            while stack:
                r, c = stack.pop()
                size += 1
                for dr, dc in NEIGHBORS_4:
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < h and 0 <= nc < w and comp[nr, nc] < 0 \
                            and labels[nr, nc] == lab_id:
                        comp[nr, nc] = n_comp
                        stack.append((nr, nc))
            comp_label.append(lab_id)
            comp_size.append(size)
            n_comp += 1

    # largest component of each label survives; ties to the earlier component
    main_comp: dict[int, int] = {}
    for ci in range(n_comp):
        lab_id = comp_label[ci]
        if lab_id not in main_comp or comp_size[ci] > comp_size[main_comp[lab_id]]:
            main_comp[lab_id] = ci
    surviving = set(main_comp.values())

    # iteratively merge fragments into whichever surviving neighbor
    # component shares the longest border
    merged_into = {ci: ci for ci in range(n_comp)}
    pending = [ci for ci in range(n_comp) if ci not in surviving]
    while pending:
        still = []
        for ci in pending:
            border: dict[int, int] = {}
            rows, cols = np.nonzero(comp == ci)
            for r, c in zip(rows.tolist(), cols.tolist()):
                for dr, dc in NEIGHBORS_4:
                    nr, nc = r + dr, c + dc
                    if 0 <= nr < h and 0 <= nc < w:
                        nb = merged_into[int(comp[nr, nc])]
                        if nb != ci and nb in surviving:
                            border[nb] = border.get(nb, 0) + 1
            if not border:
                still.append(ci)
                continue
            target = max(border.items(), key=lambda kv: (kv[1], -kv[0]))[0]
            comp[comp == ci] = target
            merged_into[ci] = target
        if len(still) == len(pending):
            # isolated fragments surrounded by other fragments only;
            # promote the first to a surviving region
            surviving.add(still[0])
            still.remove(still[0])
        pending = still

    new_ids = np.full((h, w), -1, dtype=np.int32)
    next_id = 0
    remap: dict[int, int] = {}
    for r in range(h):
        for c in range(w):
            ci = int(comp[r, c])
            if ci not in remap:
                remap[ci] = next_id
                next_id += 1
            new_ids[r, c] = remap[ci]
    return SuperpixelMap(region_ids=new_ids, n=next_id)


def compute_superpixels(img: np.ndarray, algo: str, n: int) -> SuperpixelMap:
    """Full pipeline: RGB -> Lab, gradient, then watershed (or SLIC)."""
    require_rgb_u8(img)
    if algo == "watershed":
        grad = gradient_for_watershed(img)
        markers = regular_grid_markers(*grad.shape, n)
        return watershed(grad, markers)
    if algo == "slic":
        return slic(rgb_to_lab(img), n)
    raise ValueError(f"unknown superpixel algorithm {algo!r}")


def save_superpixel_map(sp: SuperpixelMap, path) -> None:
    """Serialize region ids as a single-channel 16-bit PNG."""
    if sp.n > 65536:
        raise ValueError(f"{sp.n} regions exceed 16-bit id range")
    Image.fromarray(sp.region_ids.astype(np.uint16)).save(path, format="PNG")


def load_superpixel_map(path) -> SuperpixelMap:
    with Image.open(path) as im:
        ids = np.asarray(im, dtype=np.int32)
    if ids.ndim != 2:
        raise ValueError(f"{path}: not a single-channel map")
    return SuperpixelMap(region_ids=ids, n=int(ids.max()) + 1)
