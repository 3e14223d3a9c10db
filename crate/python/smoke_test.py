"""Smoke test for the rvos Python module.

Build and install first:

    pip install --no-build-isolation -e crates/py
"""

import json
import os
import sys
import tempfile

import rvos

SPEC = """
name = "pan_cats"
width = 160
height = 96
frame_count = 31

[camera]
pan = [2.0, 0.0]

[expression]
entity = "cat"
motion = "stationary"
targets = [1]

[[objects]]
id = 1
category = "cat"
shape = "rect"
size = [22.0, 16.0]
color = [200, 80, 60]
waypoints = [{ frame = 0, x = 40.0, y = 28.0 }]

[[objects]]
id = 2
category = "cat"
shape = "ellipse"
size = [22.0, 16.0]
color = [60, 90, 210]
waypoints = [{ frame = 0, x = 20.0, y = 70.0 }, { frame = 30, x = 65.0, y = 70.0 }]
"""


def check(cond, message):
    if not cond:
        print(f"FAIL: {message}")
        sys.exit(1)
    print(f"ok: {message}")


def main():
    check(abs(rvos.jf_mean(0.492, 0.556) - 0.524) < 1e-12, "jf_mean arithmetic")
    check(rvos.should_activate(3, 1, "sitting") and not rvos.should_activate(3, 1, ""), "pose gate")

    q = rvos.decompose("two dogs running left by the red car")
    check(q["cardinality"] == 2 and q["candidate_entities"] == ["dog"], f"decompose {q}")

    m = rvos.Mask.from_rows([[0, 1, 1], [0, 1, 0]])
    check(m.area == 3 and m.width == 3 and m.height == 2, repr(m))
    rle = m.to_rle()
    check(rle["size"] == [2, 3] and isinstance(rle["counts"], str), f"rle wire form {rle}")
    check(rvos.Mask.from_rle(rle) == m, "rle round trip")
    check(m.iou(m) == 1.0, "self iou")

    scene = rvos.simulate(SPEC, seed=3)
    check(scene.query == "the cat stationary", f"scene query {scene.query!r}")
    bundle = scene.bundle()
    check(bundle.frame_count == 31 and bundle.keyframes == [0, 15, 30], repr(bundle))

    config = rvos.Config(offline=True)
    check(config.variant == "cmr+fpv+cmm+or", config.variant)
    result = rvos.run(bundle, scene.query, config)
    check(len(result.selected_ids) == 1 and len(result.masks) == 31, f"selected {result.selected_ids}")
    report = result.evaluate(scene.target_masks)
    check(report["jf_mean"] >= 0.9, f"J&F {report['jf_mean']:.3f}")

    baseline = rvos.Config(use_cmr=False, use_fpv=False, offline=True, seed=7)
    a = rvos.run(bundle, scene.query, baseline).results_json()
    b = rvos.run(bundle, scene.query, baseline).results_json()
    check(a == b, "seeded baseline is reproducible")

    with tempfile.TemporaryDirectory() as tmp:
        scene.write(os.path.join(tmp, "scene"))
        loaded = rvos.Bundle.load(os.path.join(tmp, "scene"))
        again = rvos.run(loaded, scene.query, config)
        check(again.results_json() == result.results_json(), "bundle written and reloaded")
        result.write(os.path.join(tmp, "out"))
        stages = [json.loads(line)["stage"] for line in open(os.path.join(tmp, "out", "trace.jsonl"))]
        check(stages[0] == "decompose" and stages[-1] == "select", f"trace stages {stages}")
        paths = result.render_overlays(loaded, os.path.join(tmp, "overlays"))
        check(len(paths) == 31, "overlays written")

    try:
        rvos.Config(no_such_field=1)
    except KeyError:
        check(True, "unknown config field rejected")
    else:
        check(False, "unknown config field rejected")

    try:
        rvos.Bundle.load("/nonexistent/bundle")
    except OSError:
        check(True, "missing bundle raises OSError")
    else:
        check(False, "missing bundle raises OSError")

    report = rvos.ablate(count=5, seed=0)
    labels = [r["label"] for r in report["rows"]]
    check(labels[0] == "baseline" and labels[-1] == "cmr+fpv+cmm+or", f"ablation rows {labels}")
    print("all checks passed")


if __name__ == "__main__":
    main()
