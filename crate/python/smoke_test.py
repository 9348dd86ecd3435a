"""Smoke test for the cmkt_py extension module.

Build first with `cargo build -p cmkt-py`; the test loads
target/debug/libcmkt_py.so (or the path in CMKT_PY_LIB).
"""

import importlib.util
import os
import pathlib
import shutil
import sys
import tempfile

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    lib = os.environ.get("CMKT_PY_LIB")
    if lib is None:
        for name in ("libcmkt_py.so", "libcmkt_py.dylib", "cmkt_py.dll"):
            cand = ROOT / "target" / "debug" / name
            if cand.exists():
                lib = str(cand)
                break
    if lib is None:
        sys.exit("cmkt_py library not found; run `cargo build -p cmkt-py` or set CMKT_PY_LIB")
    tmp = tempfile.mkdtemp()
    suffix = ".pyd" if lib.endswith(".dll") else ".so"
    target = os.path.join(tmp, "cmkt_py" + suffix)
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("cmkt_py", target)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    c = load_module()
    assert "semantic-alignment" in c.METHODS
    assert c.split_counts(4345) == (3476, 434, 435)

    t = np.arange(1470) / 44100.0
    spec = c.spectrogram(np.sin(2 * np.pi * 5512.5 * t))
    assert spec.shape == (80, 80)
    assert abs(int(spec.mean(axis=1).argmax()) - 20) <= 1

    x = np.random.default_rng(0).normal(size=(20, 4))
    assert c.mmd(x, x, kernel="linear") <= 1e-12
    m = c.metrics([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert m["accuracy"] == 1.0 and m["auc_roc"] == 1.0

    ds = c.Dataset.synthetic(n_samples=60, seed=1, nuisance=1.0)
    assert ds.sizes() == (48, 6, 6) and len(ds) == 60
    imgs = ds.images("test", "visual")
    assert imgs.shape == (6, 80, 80)
    assert ds.labels("test").dtype == np.uint8

    res = c.train(ds, "semantic-alignment", direction="a2v", epochs=1, snapshot_every=1)
    model = res.model
    assert model.method == "semantic-alignment"
    assert model.input_modalities == ["visual"]
    assert len(res.history) == 1 and len(res.snapshots) >= 1
    p = model.predict(ds, "test")
    assert p.shape == (6,) and np.all((p >= 0) & (p <= 1))
    assert np.allclose(model.predict_images(imgs, "visual"), p)
    report = model.evaluate(ds, "test")
    assert 0.0 <= report["accuracy"] <= 1.0

    with tempfile.TemporaryDirectory() as d:
        model.save(d + "/model")
        again = c.Model.load(d + "/model")
        assert np.array_equal(again.predict(ds, "test"), p)
        h = ds.save_cache(d + "/cache")
        assert c.Dataset.load_cache(d + "/cache").data_hash == h
        try:
            c.Model.load(d + "/missing")
        except FileNotFoundError:
            pass
        else:
            raise AssertionError("missing model should raise FileNotFoundError")

    out = c.explain(model, ds, n=2, perturbations=40, mask="synthetic")
    assert len(out["records"]) == 2 and len(out["intersection"]["counts"]) == 2
    assert c.nuisance_mask().shape == (80, 80)
    print("smoke test passed")


if __name__ == "__main__":
    main()
