"""Smoke test for the alff_py extension module.

Run after `pip install --no-build-isolation ./crates/py` (or with the built
shared object on PYTHONPATH).
"""

import math
import tempfile

import alff_py as a


def main():
    b = a.BBox(0.0, 0.0, 10.0, 10.0)
    assert b.center == (5.0, 5.0)
    assert b.iou(a.BBox(0.0, 0.0, 10.0, 10.0)) == 1.0

    rows, sigmas = a.render_heatmap([(10.0, 10.0, 13.0, 13.0)], 32, 32, 1)
    assert rows[11][11] == 1.0
    assert abs(rows[11][12] - math.exp(-0.5)) < 1e-12
    assert sigmas == [1.0]

    pair = [0.0] * 16
    pair[4] = pair[5] = 0.5
    assert abs(a.dfl(pair, 4.5) - math.log(2)) < 1e-12
    assert a.noise_calibrate(4.0, 0.5) == 6.0
    assert a.noise_calibrate(4.0, 0.5, mode="deflate") == 2.0

    gts = [(0.0, 0.0, 10.0, 10.0)]
    assert a.average_precision([(0.0, 0.0, 10.0, 10.0, 0.9)], gts, 0.5) == 1.0
    assert a.density_label(77.30) == "low"
    assert a.density_label(256.68) == "high"

    units = a.gradcheck(1)
    assert all(ok for _, _, _, ok in units), units

    with tempfile.TemporaryDirectory() as d:
        scenes = a.make_split("low", 8, 2, d + "/data")
        assert all(label == "low" for _, _, label in scenes)
        cfg = "\n".join([
            f"dataset = {d}/data",
            "epochs = 1",
            "batch_size = 4",
            "model = tiny",
            f"checkpoint = {d}/m.ckpt",
            f"loss_csv = {d}/loss.csv",
        ])
        epochs, steps, loss = a.train(cfg)
        assert (epochs, steps) == (1, 2) and math.isfinite(loss)
        ap50, ap75, ap = a.evaluate_checkpoint(d + "/m.ckpt", d + "/data")
        assert 0.0 <= ap <= ap50 <= 1.0

        m = a.Model.load(d + "/m.ckpt")
        assert m.has_alff
        pixels = [0.5] * (64 * 64)
        dets = m.detect(pixels, 64, 64, score_thr=0.0)
        assert all(len(t) == 5 for t in dets)
        heat = m.heatmap(pixels, 64, 64)
        assert len(heat) == 64 and len(heat[0]) == 64

    print("alff_py smoke test ok")


if __name__ == "__main__":
    main()
