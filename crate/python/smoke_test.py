"""Builds the extension module and exercises it from Python.

    python3 python/smoke_test.py
"""

import math
import os
import random
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build(into):
    subprocess.run(
        ["cargo", "build", "-p", "pamcurate-py", "--release", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = os.path.join(ROOT, "target", "release", "libpamcurate_py.so")
    shutil.copy(lib, os.path.join(into, "pamcurate.so"))
    sys.path.insert(0, into)


def main():
    tmp = tempfile.mkdtemp()
    build(tmp)
    import pamcurate as pc

    assert pc.window_count(3605) == 360
    assert pc.window_id("H1", "R1", 0) == 0x6B36429D0FF7AF42
    assert pc.sampling_probability(100, 250) == 1.0
    assert pc.sampling_probability(1000, 250) == 0.25

    fence = pc.GeoFence(48.0, -123.0)
    assert fence.contains(48.0, -123.0)
    assert not fence.contains(48.1, -123.0)
    assert abs(fence.lat_span - 2000.0 / 111195.0) < 1e-12

    curve = [round(1e4 / (r + 1)) for r in range(1000)]
    rank, count = pc.kneedle(curve)
    assert 28 <= rank <= 34, rank

    assert pc.tau_at(0) == 0.999 and pc.tau_at(20) == 0.9999
    assert pc.ema_update([1.0, 2.0], [3.0, 4.0], 0.0) == [3.0, 4.0]

    path = os.path.join(tmp, "a.pamemb")
    pc.write_shard(path, [3, 1], [[1.0, 2.0], [3.5, -1.0]])
    assert pc.read_shard(path) == ([3, 1], [[1.0, 2.0], [3.5, -1.0]])

    rng = random.Random(0)
    rows = []
    for c in ([10.0, 0.0], [0.0, 10.0], [-10.0, 0.0]):
        rows += [[c[0] + rng.gauss(0, 0.1), c[1] + rng.gauss(0, 0.1)] for _ in range(200)]
    cents = sorted(pc.minibatch_fit(rows, 3, seed=1))
    assert all(math.dist(a, b) < 0.1 for a, b in zip(cents, sorted([[-10, 0], [0, 10], [10, 0]]))), cents

    h = pc.Hierarchy.fit(rows, [6, 3], seed=2, batch_size=128)
    assert (h.depth, h.dim, h.leaf_count) == (2, 2, 6)
    model = os.path.join(tmp, "m.pamhkm")
    h.save(model)
    again = pc.Hierarchy.load(model)
    path, dist = again.assign([10.0, 0.1])
    assert len(path) == 2 and dist < 0.1
    assert sum(h.counts()[0]) == 600
    assert sum(again.quotas(h.counts()[0], 30).values()) == 30

    try:
        pc.window_count(-1)
    except ValueError:
        pass
    else:
        raise AssertionError("negative duration accepted")
    print("python smoke test ok")


if __name__ == "__main__":
    main()
