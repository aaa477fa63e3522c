"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import numpy as np

_BLOCK_ELEMENTS = 1 << 21


def trig_sums(coef: np.ndarray, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    coef = np.ascontiguousarray(coef, dtype=np.complex128)
    k = np.ascontiguousarray(k, dtype=np.float64)
    C = np.zeros(k.shape[0], dtype=np.complex128)
    S = np.zeros(k.shape[0], dtype=np.complex128)
    if k.size == 0 or coef.size == 0:
        return C, S
    block = max(1, _BLOCK_ELEMENTS // k.shape[0])
    for start in range(0, coef.shape[0], block):
        stop = min(start + block, coef.shape[0])
        r = np.arange(start + 1, stop + 1, dtype=np.float64)
        phase = np.multiply.outer(k, r)
        C += np.cos(phase) @ coef[start:stop]
        S += np.sin(phase) @ coef[start:stop]
    return C, S


def marching_squares(f: np.ndarray, periodic: bool = False) -> np.ndarray:
    f = np.ascontiguousarray(f, dtype=np.float64)
    n0, n1 = f.shape
    c0 = n0 if periodic else n0 - 1
    c1 = n1 if periodic else n1 - 1
    if c0 <= 0 or c1 <= 0:
        return np.empty((0, 2), dtype=np.int64)
    i = np.arange(c0)[:, None]
    j = np.arange(c1)[None, :]
    ip = (i + 1) % n0
    jp = (j + 1) % n1
    a = f[i, j]
    b = f[i, jp]
    c = f[ip, jp]
    d = f[ip, j]
    valid = ~(np.isnan(a) | np.isnan(b) | np.isnan(c) | np.isnan(d))
    pa, pb, pc, pd = a > 0, b > 0, c > 0, d > 0
    case = pa.astype(int) | (pb << 1) | (pc << 2) | (pd << 3)
    e_bot = np.broadcast_to(2 * (i * n1 + j), case.shape)
    e_right = np.broadcast_to(2 * (i * n1 + jp) + 1, case.shape)
    e_top = np.broadcast_to(2 * (ip * n1 + j), case.shape)
    e_left = np.broadcast_to(2 * (i * n1 + j) + 1, case.shape)

    out = np.empty((2 * c0 * c1, 2), dtype=np.int64)
    # slot 0 and slot 1 per cell keep the compiled kernel's emission order
    first = np.full((c0, c1, 2), -1, dtype=np.int64)
    second = np.full((c0, c1, 2), -1, dtype=np.int64)

    saddle = valid & ((case == 5) | (case == 10))
    ordinary = valid & ~saddle & (case != 0) & (case != 15)

    cross = np.stack([pa != pb, pb != pc, pd != pc, pa != pd], axis=-1)
    ids = np.stack([e_bot, e_right, e_top, e_left], axis=-1)
    order = np.argsort(~cross, axis=-1, kind="stable")
    picked = np.take_along_axis(ids, order[..., :2], axis=-1)
    first[ordinary] = picked[ordinary]

    center = 0.25 * (a + b + c + d)
    same = (center > 0) == pa
    s1 = np.where(same[..., None], np.stack([e_bot, e_right], -1), np.stack([e_bot, e_left], -1))
    s2 = np.where(same[..., None], np.stack([e_left, e_top], -1), np.stack([e_right, e_top], -1))
    first[saddle] = s1[saddle]
    second[saddle] = s2[saddle]

    both = np.stack([first, second], axis=2).reshape(-1, 2)
    keep = both[:, 0] >= 0
    out = both[keep]
    return np.ascontiguousarray(out, dtype=np.int64)
