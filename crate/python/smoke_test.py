"""Smoke test for the Python bindings: python python/smoke_test.py"""

import math

import homoguard_py as hg


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for ra, rb in zip(a, b) for x, y in zip(ra, rb))


frames = hg.FrameConfig()
assert frames.meters_per_resized_pixel() == 6.0

square = [(0, 0), (511, 0), (511, 511), (0, 511)]
shifted = [(x + 600, y + 500) for x, y in square]
h = hg.dlt(square, shifted)
assert abs(h[0][2] / h[2][2] - 600) < 1e-6 and abs(h[1][2] / h[2][2] - 500) < 1e-6

# thermal placed at (600, 500) in the satellite patch, seen through every crop
crops = hg.generate_crops("random", o_c=32, n_c=5, seed=7)
assert crops[0] == (0.0, 0.0, 512)


def crop_view_displacement(x, y, size, tx=600.0, ty=500.0):
    """Corner displacement of a 256 px crop view into the 256 px satellite view."""
    base = [(0, 0), (255, 0), (255, 255), (0, 255)]
    sat = [((x + u * size / 256 + tx) / 6, (y + v * size / 256 + ty) / 6) for u, v in base]
    return [[p[0] - u for p, (u, _) in zip(sat, base)], [p[1] - v for p, (_, v) in zip(sat, base)]]


recovered = [hg.recover_full_displacement(crop_view_displacement(*c), c[:2], c[2]) for c in crops]
assert close(recovered[1], crop_view_displacement(0, 0, 512), 1e-9)
u = hg.croptta_uncertainty(recovered)
assert max(max(r) for r in u) < 1e-9, u

spread = [[[float(i)] * 4, [float(i)] * 4] for i in range(5)]
u = hg.croptta_uncertainty(spread)
assert abs(hg.uncertainty_score(u) - math.sqrt(2.0)) < 1e-12
assert hg.should_reject(u, 1.0) and not hg.should_reject(u, 2.0)
assert close(hg.merge_uncertainty(u, [[0.0] * 4] * 2, "min"), [[0.0] * 4] * 2)
assert close(hg.aggregate_displacement(spread, "mean"), [[2.0] * 4] * 2)

pred = [[1.0] * 4, [0.0] * 4]
assert abs(hg.mace(pred, [[0.0] * 4] * 2) - 6.0) < 1e-12
assert hg.center_error(pred, [[0.0] * 4] * 2) <= hg.mace(pred, [[0.0] * 4] * 2)

roc = hg.roc_curve([0.1, 0.2, 0.9, 1.5], [1.0, 2.0, 40.0, 80.0])
assert roc["auc"] == 1.0 and roc["positives"] == 2

gt = [[12.0] * 4, [-6.0] * 4]
loss = hg.croptta_loss([[gt, gt], [gt, gt]], gt)
assert loss == 0.0

data = hg.SyntheticDataset(seed=1, count=6, map_size=2048)
assert len(data) == 6
entry = data.entry(0)
(sw, sat), (tw, th) = data.render(0)
assert (sw, tw) == (1536, 512) and len(sat) == sw * sw and len(th) == tw * tw
records = data.evaluate(estimator="classical", threads=1)
assert len(records) == 6
for r in records:
    assert r["rejected"] == (r["score"] > hg.DEFAULT_REJECTION_THRESHOLD)

try:
    hg.generate_crops("grid", n_c=4)
except ValueError:
    pass
else:
    raise AssertionError("grid with 4 views must fail")

print("smoke test passed:", entry["id"], entry["category"], [round(r["mace_m"], 2) for r in records])
