"""Smoke test for the `alpr` extension module.

Builds the extension with cargo (unless ALPR_SKIP_BUILD is set), copies the
shared library next to this script as `alpr.so`, imports it and exercises
the main entry points.
"""

import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

HERE = Path(__file__).resolve().parent
ROOT = HERE.parent


def build() -> None:
    if not os.environ.get("ALPR_SKIP_BUILD"):
        subprocess.run(["cargo", "build", "--release", "-p", "alpr-py"], cwd=ROOT, check=True)
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    lib = target / "release" / ("libalpr.dylib" if sys.platform == "darwin" else "libalpr.so")
    shutil.copy(lib, HERE / "alpr.so")
    sys.path.insert(0, str(HERE))


def main() -> None:
    build()
    import alpr

    assert [alpr.required_filters(c) for c in (1, 2, 10, 26)] == [30, 35, 75, 155]
    rows = alpr.infer_shapes("fast-yolo-2class")
    assert rows[11][2:] == ((13, 13, 512), (13, 13, 512))
    assert rows[-1][3] == (13, 13, 35)
    assert alpr.validate("cr-net-letters") == []
    print(alpr.shape_table("cr-net-digits"))

    a = alpr.BBox(0, 0, 10, 10)
    b = alpr.BBox(5, 0, 10, 10)
    assert abs(alpr.iou(a, b) - 1 / 3) < 1e-12
    assert alpr.expand_margin(alpr.BBox(100, 100, 100, 40), 0.1).as_tuple() == (90, 96, 120, 48)

    assert ("VH", "9") in alpr.flip_variants("6")
    assert sorted(alpr.digit_seed_letters()) == [("0", "O"), ("1", "I")]
    assert alpr.majority_vote(["ABC-1234", "ABC-1284", "ABD-1234"]) == "ABC-1234"

    cands = [(alpr.BBox(i * 20, 0, 10, 20), 0.9) for i in range(7)]
    cands.append((alpr.BBox(0, 0, 10, 6), 0.5))
    assert len(alpr.resolve_overlaps(cands, "car")) == alpr.PLATE_LEN

    m = alpr.match_detections([(a, 0.9), (alpr.BBox(500, 500, 10, 10), 0.8)], [b, a])
    assert (m["true_positives"], m["false_positives"], m["false_negatives"]) == (1, 1, 1)

    grid = alpr.heatmap([a], frame=(40, 40), bins=4)
    assert grid[0][0] == 1.0 and grid[3][3] == 0.0

    with tempfile.TemporaryDirectory() as tmp:
        sizes = alpr.synth(tmp, tracks=20, seed=1, frames=5)
        assert sizes == (8, 8, 4), sizes
        report = alpr.run(tmp, split="all", workers=2)
        assert all(s["recall"] == 1.0 for s in report["stages"])
        noisy = alpr.run(tmp, split="all", miss_rate=0.1)
        vehicle = next(s for s in noisy["stages"] if s["stage"] == "vehicle")
        assert vehicle["true_positives"] + vehicle["false_negatives"] == 100
        print("end-to-end fps", report["timing"]["end_to_end"]["fps"])

    print("python smoke test ok")


if __name__ == "__main__":
    main()
