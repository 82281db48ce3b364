"""Independent brute-force / direct-formula oracles used across test modules.

Everything here is deliberately written as plain loops over the defining
formulas, so it shares no code path with the implementations it checks.
"""

import math

import numpy as np


def direct_ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0,
                size: int = 11, sigma: float = 1.5) -> float:
    """SSIM by direct per-pixel window evaluation (zero padding)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    h, w = a.shape
    half = size // 2
    kern = np.array([math.exp(-((i - half) ** 2) / (2 * sigma * sigma)) for i in range(size)])
    kern /= kern.sum()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def window_stats(img, other, r, c):
        mu_x = mu_y = sxx = syy = sxy = 0.0
        for dy in range(-half, half + 1):
            for dx in range(-half, half + 1):
                wgt = kern[dy + half] * kern[dx + half]
                y, x = r + dy, c + dx
                va = img[y, x] if 0 <= y < h and 0 <= x < w else 0.0
                vb = other[y, x] if 0 <= y < h and 0 <= x < w else 0.0
                mu_x += wgt * va
                mu_y += wgt * vb
                sxx += wgt * va * va
                syy += wgt * vb * vb
                sxy += wgt * va * vb
        return mu_x, mu_y, sxx - mu_x * mu_x, syy - mu_y * mu_y, sxy - mu_x * mu_y

    total = 0.0
    for r in range(h):
        for c in range(w):
            mu_x, mu_y, var_x, var_y, cov = window_stats(a, b, r, c)
            total += ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
                (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
    return total / (h * w)


def direct_ssim_windows(a: np.ndarray, b: np.ndarray, peak: float = 1.0,
                        size: int = 11, sigma: float = 1.5) -> float:
    """SSIM via explicit zero-padded window extraction (tensordot, no convs).

    Vectorized variant of direct_ssim for images where the loop version is
    too slow; still a distinct numerical path from the implementation's
    separable filters.
    """
    from numpy.lib.stride_tricks import sliding_window_view

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    half = size // 2
    x = np.arange(size) - half
    k1 = np.exp(-(x ** 2) / (2 * sigma * sigma))
    k1 /= k1.sum()
    kernel = np.outer(k1, k1)

    def stats(img, other):
        pa = np.pad(img, half)
        pb = np.pad(other, half)
        wa = sliding_window_view(pa, (size, size))
        wb = sliding_window_view(pb, (size, size))
        mu_a = np.tensordot(wa, kernel, axes=([2, 3], [0, 1]))
        mu_b = np.tensordot(wb, kernel, axes=([2, 3], [0, 1]))
        raw_aa = np.tensordot(wa * wa, kernel, axes=([2, 3], [0, 1]))
        raw_bb = np.tensordot(wb * wb, kernel, axes=([2, 3], [0, 1]))
        raw_ab = np.tensordot(wa * wb, kernel, axes=([2, 3], [0, 1]))
        return mu_a, mu_b, raw_aa - mu_a ** 2, raw_bb - mu_b ** 2, raw_ab - mu_a * mu_b

    mu_a, mu_b, var_a, var_b, cov = stats(a, b)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(ssim_map.mean())


def brute_force_knn(points: np.ndarray, k: int) -> list:
    """Neighbor index sets by full O(N^2) distance enumeration."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    sets = []
    for i in range(n):
        dists = [(float(np.sum((points[i] - points[j]) ** 2)), j)
                 for j in range(n) if j != i]
        dists.sort()
        sets.append({j for _, j in dists[:k]})
    return sets


def brute_force_plan(frame_poses: dict, source_refs: list, capacity: int,
                     chain: bool, w_rot: float = 0.5) -> list:
    """Reference implementation of the greedy pass rule, plain loops.

    Returns a list of (targets, chain_refs) tuples.
    """

    def dist(a, b):
        t = math.sqrt(sum((x - y) ** 2 for x, y in zip(a[1], b[1])))
        tr = sum(a[0][r][c] * b[0][r][c] for r in range(3) for c in range(3))
        ang = math.acos(min(1.0, max(-1.0, (tr - 1.0) / 2.0)))
        return t + w_rot * ang

    refs = sorted(set(source_refs))
    unprocessed = sorted(i for i in frame_poses if i not in refs)
    processed = list(refs)
    passes = []
    while unprocessed:
        targets, chain_refs = [], []
        # distances to the processed set are frozen for the whole pass
        ranked = []
        for u in unprocessed:
            best = min((dist(frame_poses[u], frame_poses[p]), p) for p in processed)
            ranked.append((best[0], u, best[1]))
        ranked.sort(key=lambda x: (x[0], x[1]))
        for d, u, nearest in ranked:
            needs_chain = chain and nearest not in refs and nearest not in chain_refs
            slots = 1 + (1 if needs_chain else 0)
            if len(refs) + len(targets) + len(chain_refs) + slots > capacity:
                break
            targets.append(u)
            if needs_chain:
                chain_refs.append(nearest)
        if not targets:
            raise ValueError("capacity too small")
        passes.append((targets, chain_refs))
        processed.extend(targets)
        unprocessed = [u for u in unprocessed if u not in targets]
    return passes
