"""Patch grouping (block matching), gathering and reprojection.

Patches are addressed by the pixel coordinates of their top-left corner. A
:class:`GroupSet` only stores geometry; :func:`gather` turns it into
similarity matrices of shape ``(N, n, k)`` for any image of the same size, so
the noisy image, the pilot and the current iterate can be read at identical
positions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view

# Fixed chunking keeps floating-point accumulation order independent of the
# number of worker threads.
CHUNK = 1024


@dataclass(frozen=True)
class PatchGroup:
    """A reference patch and its ``k - 1`` nearest neighbours."""

    rows: np.ndarray  # (k,) top-left rows, rows[0] is the reference
    cols: np.ndarray
    distances: np.ndarray  # squared l2 distance to the reference
    matrix: np.ndarray  # (n, k) flattened patches as columns


@dataclass(frozen=True)
class GroupSet:
    rows: np.ndarray  # (N, k) int
    cols: np.ndarray  # (N, k) int
    distances: np.ndarray  # (N, k) float
    patch_side: int
    shape: tuple[int, int]

    @property
    def group_size(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def group(self, i: int, img: np.ndarray) -> PatchGroup:
        m = gather(img, self, slice(i, i + 1))[0]
        return PatchGroup(self.rows[i], self.cols[i], self.distances[i], m)

    def coverage(self) -> np.ndarray:
        """Number of patch occurrences covering each pixel."""
        h, w = self.shape
        p = self.patch_side
        counts = np.zeros((h, w))
        occ = np.zeros((h - p + 1, w - p + 1))
        np.add.at(occ, (self.rows.ravel(), self.cols.ravel()), 1.0)
        for i in range(p):
            for j in range(p):
                counts[i : i + occ.shape[0], j : j + occ.shape[1]] += occ
        return counts


def _axis_positions(size: int, p: int, step: int) -> np.ndarray:
    last = size - p
    pos = np.arange(0, last + 1, step)
    if pos[-1] != last:
        pos = np.append(pos, last)
    return pos


def reference_positions(height: int, width: int, patch_side: int, step: int):
    """Top-left corners of the reference patches: a ``step`` lattice plus the last index per axis.

    Returns ``(rows, cols)`` as flat arrays in row-major order.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    if patch_side > height or patch_side > width:
        raise ValueError(
            f"patch side {patch_side} does not fit in a {height}x{width} image"
        )
    r = _axis_positions(height, patch_side, step)
    c = _axis_positions(width, patch_side, step)
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return rr.ravel(), cc.ravel()


@njit(cache=True, nogil=True)
def _knn_kernel(img, ref_r, ref_c, p, k, v, early_abandon, out_r, out_c, out_d):
    hp = img.shape[0] - p + 1
    wp = img.shape[1] - p + 1
    short = 0
    for a in range(ref_r.shape[0]):
        r0 = ref_r[a]
        c0 = ref_c[a]
        bd = out_d[a]
        br = out_r[a]
        bc = out_c[a]
        bd[0] = 0.0
        br[0] = r0
        bc[0] = c0
        m = 1
        for rr in range(max(0, r0 - v), min(hp - 1, r0 + v) + 1):
            for cc in range(max(0, c0 - v), min(wp - 1, c0 + v) + 1):
                if rr == r0 and cc == c0:
                    continue
                limit = bd[k - 1] if m == k else np.inf
                d = 0.0
                dropped = False
                for i in range(p):
                    for j in range(p):
                        t = img[r0 + i, c0 + j] - img[rr + i, cc + j]
                        d += t * t
                    # partial sums never decrease, so this cannot change the selection
                    if early_abandon and d >= limit:
                        dropped = True
                        break
                if dropped or d >= limit:
                    continue
                pos = m if m < k else k - 1
                while pos > 1 and bd[pos - 1] > d:
                    bd[pos] = bd[pos - 1]
                    br[pos] = br[pos - 1]
                    bc[pos] = bc[pos - 1]
                    pos -= 1
                bd[pos] = d
                br[pos] = rr
                bc[pos] = cc
                if m < k:
                    m += 1
        if m < k:
            short += 1
    return short


def _match(img, ref_r, ref_c, p, k, v, early_abandon=True):
    n = len(ref_r)
    out_r = np.empty((n, k), dtype=np.int64)
    out_c = np.empty((n, k), dtype=np.int64)
    out_d = np.empty((n, k))
    short = _knn_kernel(img, ref_r, ref_c, p, k, v, early_abandon, out_r, out_c, out_d)
    if short:
        raise ValueError(
            f"fewer than k={k} candidate patches in the search window; "
            "reduce the group size or enlarge the window"
        )
    return out_r, out_c, out_d


def block_match(img, ref_row: int, ref_col: int, patch_side: int, k: int, window: int) -> PatchGroup:
    """The ``k`` patches closest to the reference inside a ``window`` x ``window`` search area.

    The search area is centred on the reference position and clipped at the
    image borders. Column 0 is the reference; the rest are sorted by ascending
    squared l2 distance, ties broken by ascending row-major position.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    h, w = img.shape
    if k > window**2:
        raise ValueError(f"group size k={k} exceeds the search window")
    if not (0 <= ref_row <= h - patch_side and 0 <= ref_col <= w - patch_side):
        raise ValueError("reference patch outside the image")
    r, c, d = _match(
        img, np.array([ref_row]), np.array([ref_col]), patch_side, k, window // 2
    )
    gs = GroupSet(r, c, d, patch_side, img.shape)
    return gs.group(0, img)


def extract_groups(
    img,
    patch_side: int,
    k: int,
    window: int,
    step: int,
    threads: int = 1,
    early_abandon: bool = True,
) -> GroupSet:
    """Block matching for every reference position of the ``step`` lattice."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    h, w = img.shape
    if step > patch_side:
        raise ValueError("step larger than the patch side leaves pixels uncovered")
    rows, cols = reference_positions(h, w, patch_side, step)
    v = window // 2
    # fixed-size blocks of references, matched independently of each other
    blocks = [slice(i, i + CHUNK) for i in range(0, len(rows), CHUNK)]

    def run(sl):
        return _match(img, rows[sl], cols[sl], patch_side, k, v, early_abandon)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, blocks))
    else:
        parts = [run(sl) for sl in blocks]
    r = np.concatenate([p[0] for p in parts])
    c = np.concatenate([p[1] for p in parts])
    d = np.concatenate([p[2] for p in parts])
    return GroupSet(r, c, d, patch_side, (h, w))


def _patch_view(img: np.ndarray, p: int) -> np.ndarray:
    return sliding_window_view(img, (p, p))


def gather(img, gs: GroupSet, which: slice | None = None) -> np.ndarray:
    """Similarity matrices ``(N, n, k)`` of ``img`` at the positions stored in ``gs``."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != tuple(gs.shape):
        raise ValueError(f"image shape {img.shape} does not match group geometry {gs.shape}")
    which = slice(None) if which is None else which
    p = gs.patch_side
    patches = _patch_view(img, p)[gs.rows[which], gs.cols[which]]  # (N, k, p, p)
    n_groups, k = patches.shape[:2]
    return patches.reshape(n_groups, k, p * p).transpose(0, 2, 1)


def pixel_index(gs: GroupSet, which: slice) -> np.ndarray:
    # (N, n, k) flat pixel indices matching the layout returned by gather
    p = gs.patch_side
    w = gs.shape[1]
    di, dj = np.divmod(np.arange(p * p), p)
    top = gs.rows[which][:, None, :] + di[None, :, None]
    left = gs.cols[which][:, None, :] + dj[None, :, None]
    return top * w + left


def accumulate(gs: GroupSet, estimates: np.ndarray, which: slice, idx=None) -> np.ndarray:
    """Per-pixel sums of the estimates of groups ``which``, in group order.

    ``idx`` may pass in precomputed ``pixel_index(gs, which)``.
    """
    h, w = gs.shape
    if idx is None:
        idx = pixel_index(gs, which)
    return np.bincount(idx.ravel(), weights=np.asarray(estimates).ravel(), minlength=h * w)


def chunks(n_groups: int):
    return [slice(i, min(i + CHUNK, n_groups)) for i in range(0, n_groups, CHUNK)]


def finish_average(gs: GroupSet, sums: np.ndarray, base: np.ndarray | None = None) -> np.ndarray:
    """Divide accumulated sums by coverage counts.

    When ``sums`` holds deviations from ``base``, the result is
    ``base + sums / counts``; pixels whose estimates all equal ``base`` then
    come back bit-exact.
    """
    h, w = gs.shape
    counts = gs.coverage().ravel()
    if np.any(counts == 0):
        raise ValueError("some pixels are not covered by any patch")
    out = sums / counts
    if base is not None:
        out = out + np.asarray(base, dtype=np.float64).ravel()
    return out.reshape(h, w)


def aggregate(gs: GroupSet, estimates, height: int | None = None, width: int | None = None):
    """Put every patch estimate back in place and average per pixel.

    ``estimates`` is an ``(N, n, k)`` array laid out as returned by
    :func:`gather`. Every occurrence counts, including a patch repeated within
    one group.
    """
    if height is not None and (height, width) != tuple(gs.shape):
        raise ValueError("output size does not match group geometry")
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.shape != (len(gs), gs.patch_side**2, gs.group_size):
        raise ValueError(f"estimates shape {estimates.shape} does not match the group set")
    size = gs.shape[0] * gs.shape[1]
    # per-pixel base value: the first estimate in group order
    base = np.full(size, np.nan)
    for sl in chunks(len(gs)):
        idx = pixel_index(gs, sl).ravel()
        first_pix, first_at = np.unique(idx, return_index=True)
        fresh = np.isnan(base[first_pix])
        base[first_pix[fresh]] = estimates[sl].ravel()[first_at[fresh]]
    if np.isnan(base).any():
        raise ValueError("some pixels are not covered by any patch")
    sums = np.zeros(size)
    for sl in chunks(len(gs)):
        sums += accumulate(gs, estimates[sl] - gather(base.reshape(gs.shape), gs, sl), sl)
    return finish_average(gs, sums, base)


def single_choice(gs: GroupSet, seed: int = 0):
    """Which reference-patch entry each pixel takes in :func:`select_single`.

    Returns ``(pixels, group, entry)`` arrays: pixel ``pixels[j]`` takes
    ``estimates[group[j], entry[j], 0]``. Depends only on geometry and seed.
    """
    h, w = gs.shape
    p = gs.patch_side
    n_groups = len(gs)
    di, dj = np.divmod(np.arange(p * p), p)
    c = (p - 1) / 2
    centrality = np.broadcast_to((di - c) ** 2 + (dj - c) ** 2, (n_groups, p * p))
    pix = (gs.rows[:, 0, None] + di) * w + (gs.cols[:, 0, None] + dj)
    tie = np.random.Generator(np.random.Philox(seed)).random(pix.shape)
    order = np.lexsort((tie.ravel(), centrality.ravel(), pix.ravel()))
    pix_sorted = pix.ravel()[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    if first.sum() != h * w:
        raise ValueError("some pixels are not covered by any reference patch")
    group, entry = np.divmod(order[first], p * p)
    return pix_sorted[first], group, entry


def select_single(gs: GroupSet, estimates, seed: int = 0, choice=None) -> np.ndarray:
    """One estimate per pixel, taken from the denoised reference patches.

    Each pixel takes its value from a reference patch (column 0 of a group) in
    which it sits as close as possible to the patch centre; ties are broken at
    random with ``seed``. For odd patch sides and unit step this is the
    denoised central pixel of the reference patch centred on the pixel.
    ``choice`` may pass a precomputed :func:`single_choice`.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    pixels, group, entry = choice or single_choice(gs, seed)
    out = np.empty(gs.shape[0] * gs.shape[1])
    out[pixels] = estimates[group, entry, 0]
    return out.reshape(gs.shape)
