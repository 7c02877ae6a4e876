"""Smoke test for the Python bindings.

Build and install first:

    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import json
import math
import tempfile

import intrinsic

FAST = json.dumps({"k": 6, "max_outer_iter": 3})
SMALL = json.dumps({"width": 32, "height": 32})


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    terms = intrinsic.Composition.terms()
    assert len(terms) == 11, terms

    red = intrinsic.name_color([0.8, 0.1, 0.1])
    assert red.dominant() == "red", red
    assert close(sum(red.to_dict().values()), 1.0)

    try:
        intrinsic.Composition({"red": 0.5})
    except ValueError:
        pass
    else:
        raise AssertionError("unnormalized composition accepted")

    scene = intrinsic.synth(3, SMALL)
    img = scene.image
    assert (img.width, img.height, len(img)) == (32, 32, 1024)

    a = intrinsic.decompose(img, scene.composition, config=FAST, seed=1)
    b = intrinsic.decompose(img, scene.composition, config=FAST, seed=1)
    assert a.trace_csv() == b.trace_csv(), "runs differ"

    report = a.report()
    assert report["seed"] == 1
    assert close(sum(report["achieved"].values()), 1.0, 1e-6)

    # I = R * L * S on every valid pixel
    light = a.illuminant
    worst = 0.0
    for i, r, s in zip(img.pixels(), a.reflectance.pixels(), a.shading.pixels()):
        for c in range(3):
            worst = max(worst, abs(r[c] * light[c] * s[c] - i[c]) / max(i[c], 1e-12))
    assert worst < 1e-9, worst

    m = intrinsic.evaluate(a.reflectance, a.shading, scene.reflectance, scene.shading)
    assert set(m) == {"reflectance", "shading", "mean"}
    assert all(math.isfinite(v) for v in m["mean"].values())

    exact = intrinsic.evaluate(scene.reflectance, scene.shading, scene.reflectance, scene.shading)
    assert close(exact["mean"]["lmse"], 0.0, 1e-12)

    gray = scene.reflectance.gray()
    assert close(intrinsic.lmse([2 * g for g in gray], gray, 32, 32), 0.0, 1e-12)

    unguided = intrinsic.decompose(img, scene.composition, config=FAST, color_naming=False)
    assert unguided.report()["color_naming"] is False

    with tempfile.TemporaryDirectory() as d:
        paths = a.save(d)
        assert len(paths) == 7, paths
        back = intrinsic.Image.load(f"{d}/reflectance.png")
        assert back.width == 32

    print("smoke test passed: lmse %.4f, achieved %s" % (m["reflectance"]["lmse"], a.achieved.dominant()))


if __name__ == "__main__":
    main()
