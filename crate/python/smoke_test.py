"""Smoke test for the primrnn_py extension.

Build first with `cargo build --release -p primrnn-py`, then run
`python3 python/smoke_test.py` from the repository root.
"""

import json
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module(tmp):
    lib = os.path.join(ROOT, "target", "release", "libprimrnn_py.so")
    if not os.path.exists(lib):
        sys.exit(f"missing {lib}; run `cargo build --release -p primrnn-py`")
    shutil.copy(lib, os.path.join(tmp, "primrnn_py.so"))
    sys.path.insert(0, tmp)
    import primrnn_py

    return primrnn_py


def box_obj(path, sx, sy, sz):
    verts = [(x * sx / 2, y * sy / 2, z * sz / 2) for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    faces = [(0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5), (0, 4, 5), (0, 5, 1),
             (2, 3, 7), (2, 7, 6), (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3)]
    with open(path, "w") as f:
        for v in verts:
            f.write("v %g %g %g\n" % v)
        for a, b, c in faces:
            f.write("f %d %d %d\n" % (a + 1, b + 1, c + 1))


def main():
    tmp = tempfile.mkdtemp()
    try:
        p = load_module(tmp)
        meshes = os.path.join(tmp, "meshes")
        os.makedirs(meshes)
        for name, size in [("a", (1.0, 0.6, 0.4)), ("b", (0.5, 0.5, 0.9)), ("c", (0.8, 0.3, 0.3))]:
            box_obj(os.path.join(meshes, name + ".obj"), *size)
        a = os.path.join(meshes, "a.obj")

        prims = p.fit_mesh(a, seed=7, config="[parser]\nrestarts = 4\n")
        score = p.iou(prims, a)
        assert 0.8 <= score <= 1.0, score
        print(f"fit_mesh: {len(json.loads(prims)['primitives'])} primitive(s), IoU {score:.3f}")

        pts = [[i / 9, j / 18, k / 30] for i in range(10) for j in range(10) for k in range(10)]
        assert json.loads(p.fit_points(pts, seed=1))["primitives"]

        views = p.render_depth(a, seed=3)
        assert len(views) == 5 and all(len(v) == 4096 for v in views)

        ds = os.path.join(tmp, "ds")
        manifest = json.loads(p.build_dataset(meshes, ds, seed=1, config="[parser]\nrestarts = 4\n"))
        assert len(manifest["shapes"]) == 3
        w = os.path.join(tmp, "w.json")
        losses = p.train(ds, w, seed=1, tiny=True, epochs=5)
        print(f"train: {len(losses)} epochs, final loss {losses[-1]:.3f}")
        p.generate(w, seed=2)
        done = json.loads(p.complete(w, views[0], seed=2, mode="greedy"))
        print(f"complete: {len(done['primitives'])} primitive(s)")

        try:
            p.complete(w, [0.0] * 10)
        except ValueError:
            pass
        else:
            raise AssertionError("bad depth size accepted")
        try:
            p.iou(prims, os.path.join(tmp, "missing.obj"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file accepted")
        print("ok")
    finally:
        shutil.rmtree(tmp)


if __name__ == "__main__":
    main()
