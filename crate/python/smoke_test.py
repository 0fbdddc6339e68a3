"""Smoke test for the polarring extension module.

Build and install the extension with `maturin develop --release -m
crates/python/Cargo.toml`, then run `python python/smoke_test.py`.
"""

import json
import math
import sys
import tempfile

import polarring


def main():
    assert abs(polarring.proximity_value(0.0) - math.expm1(6.0)) < 1e-9
    assert polarring.proximity_value(5.0) == 0.0

    ph = polarring.generate_phantom(3)
    vol = ph.volume
    print("phantom", vol, "vessels", ph.n_vessels)

    maps = ph.proximity()
    ch = ph.channel(0)
    path = polarring.trace_with_waypoints(maps[ch], channel=ch, stride=50)
    assert path.is_connected()
    print("centerline voxels", len(path), "cost", round(path.cost, 3))

    k = vol.dims[2] // 2
    lumen, outer = ph.polygons(0, k)
    assert polarring.hausdorff(lumen, lumen) == 0.0
    assert polarring.dice(outer, outer, vol) == 1.0

    small = {"mode": "single", "grid": {"n_angles": 7, "n_samples": 15, "ray_spacing": 0.5},
             "channels": 2, "epochs": 1, "batch_size": 50}
    model = polarring.Model(seed=1, config_json=json.dumps(small))
    losses = model.train([ph], slice_stride=8)
    assert all(math.isfinite(x) for x in losses)
    cx, cy, _ = ph.center(0, k)
    lr, orad = model.predict(vol, (cx, cy), k)
    assert all(o >= l for l, o in zip(lr, orad))
    with tempfile.TemporaryDirectory() as d:
        model.save(d)
        again = polarring.Model.load(d)
        assert again.predict(vol, (cx, cy), k) == (lr, orad)

    checks = polarring.run_selftest()
    for name, ok, detail in checks:
        print("[PASS]" if ok else "[FAIL]", name, detail)
    return 0 if all(ok for _, ok, _ in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
