"""Built-in diagnostic checks: gradients and rasterizer kernels vs naive oracles.

Each check re-derives its expected values with a deliberately dumb
reference implementation (nested loops, exhaustive point-in-polygon,
all-pairs distances), so a PASS means the optimized kernel and the
definition agree — not that the kernel agrees with itself.
"""

from __future__ import annotations

import sys

import numpy as np

__all__ = ["run_selftest"]


def _check_gradient(seed: int):
    from .net import Network, NetworkConfig, gradient_check

    rng = np.random.default_rng(seed)
    net = Network(NetworkConfig(levels=2, base_features=2), seed=seed)
    x = rng.standard_normal((1, 8, 8, 1))
    labels = rng.integers(0, 4, (1, 8, 8))
    err = gradient_check(net, x, labels)
    return err < 1e-6, f"max relative error {err:.3e} (tolerance 1e-6)"


def _check_conv2d(seed: int):
    from .net import conv2d

    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((2, 5, 7, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    got = conv2d(x, w, b, pad=1)

    xp = np.zeros((2, 7, 9, 3))
    xp[:, 1:6, 1:8, :] = x
    want = np.zeros((2, 5, 7, 4))
    for n in range(2):
        for i in range(5):
            for j in range(7):
                for o in range(4):
                    acc = b[o]
                    for di in range(3):
                        for dj in range(3):
                            for c in range(3):
                                acc += xp[n, i + di, j + dj, c] * w[di, dj, c, o]
                    want[n, i, j, o] = acc
    err = np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-12)
    return err < 1e-6, f"vs quadruple-loop oracle, relative error {err:.3e}"


def _check_maxpool2(seed: int):
    from .net import maxpool2

    rng = np.random.default_rng(seed + 2)
    x = rng.standard_normal((2, 6, 8, 3))
    got, _ = maxpool2(x)
    want = np.zeros((2, 3, 4, 3))
    for n in range(2):
        for i in range(3):
            for j in range(4):
                for c in range(3):
                    want[n, i, j, c] = x[n, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2, c].max()
    ok = np.array_equal(got, want)
    return ok, "2x2 window maxima match"


def _check_upsample2(seed: int):
    from .net import upsample2

    rng = np.random.default_rng(seed + 3)
    x = rng.standard_normal((1, 4, 5, 2))
    got = upsample2(x)
    want = np.zeros((1, 8, 10, 2))
    for i in range(8):
        for j in range(10):
            want[0, i, j, :] = x[0, i // 2, j // 2, :]
    ok = np.array_equal(got, want)
    return ok, "nearest-neighbor doubling matches"


def _check_fill_polygon(seed: int):
    from .raster import polygon_mask

    rng = np.random.default_rng(seed + 4)
    worst = 0
    for _ in range(10):
        k = int(rng.integers(3, 7))
        verts = np.column_stack(
            [rng.uniform(0, 20, k), rng.uniform(0, 14, k)]
        )
        got = polygon_mask(verts, 14, 20)
        want = np.zeros((14, 20), dtype=bool)
        for row in range(14):
            for col in range(20):
                px, py = col + 0.5, row + 0.5
                inside = False
                for a in range(k):
                    x1, y1 = verts[a]
                    x2, y2 = verts[(a + 1) % k]
                    if (y1 <= py) != (y2 <= py):
                        t = (py - y1) / (y2 - y1)
                        if px < x1 + t * (x2 - x1):
                            inside = not inside
                want[row, col] = inside
        worst = max(worst, int(np.sum(got != want)))
    return worst == 0, f"even-odd oracle, {worst} mismatched pixels over 10 polygons"


def _check_distance_transform(seed: int):
    from .raster import one_sided_distance_transform

    rng = np.random.default_rng(seed + 5)
    worst = 0.0
    for _ in range(5):
        mask = rng.random((12, 12)) < 0.4
        got = one_sided_distance_transform(mask)
        h, w = mask.shape
        want = np.zeros((h, w))
        for i in range(h):
            for j in range(w):
                if not mask[i, j]:
                    continue
                best = float("inf")
                for a in range(-1, h + 1):
                    for b in range(-1, w + 1):
                        outside = not (0 <= a < h and 0 <= b < w) or not mask[a, b]
                        if outside:
                            best = min(best, (a - i) ** 2 + (b - j) ** 2)
                want[i, j] = np.sqrt(best)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return worst < 1e-9, f"all-pairs oracle, worst deviation {worst:.2e}"


_CHECKS = [
    ("gradient-check", _check_gradient),
    ("conv2d-oracle", _check_conv2d),
    ("maxpool2-oracle", _check_maxpool2),
    ("upsample2-oracle", _check_upsample2),
    ("fill-polygon-oracle", _check_fill_polygon),
    ("distance-transform-oracle", _check_distance_transform),
]


def run_selftest(seed: int = 0, out=None) -> int:
    """Run every check; print one PASS/FAIL line each. Returns 0/1."""
    out = out if out is not None else sys.stdout
    failures = 0
    for name, check in _CHECKS:
        try:
            ok, detail = check(seed)
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(f"{status} {name}: {detail}", file=out)
    print(
        f"{len(_CHECKS) - failures}/{len(_CHECKS)} checks passed",
        file=out,
    )
    return 0 if failures == 0 else 1
