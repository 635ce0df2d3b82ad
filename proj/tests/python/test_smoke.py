# Copyright 2026 The mudet Authors
# SPDX-License-Identifier: Apache-2.0

import math

import numpy as np
import pytest

import mudet


def test_gamma_and_slice_match_numpy():
    rng = np.random.default_rng(0)
    img = rng.uniform(0.0, 1.0, size=(3, 8, 9))
    out = mudet.gamma_transform(img, A=1.3, gamma=0.7)
    assert out.shape == img.shape
    # math.pow is libm pow; numpy's vectorized power may differ in the last bit.
    want = np.array([min(max(math.pow(1.3 * v, 0.7), 0.0), 1.0) for v in img.ravel()])
    np.testing.assert_array_equal(out, want.reshape(img.shape))

    h = rng.uniform(0.0, 10.0, size=(16, 16))
    s = mudet.grayscale_slice(h, h1=0.0, h2=12.0, i0=0.5, i1=6.0)
    want = np.where(h <= 0.5, 0.0, np.where(h <= 6.0, h, 12.0))
    np.testing.assert_array_equal(s, want)
    np.testing.assert_array_equal(mudet.grayscale_slice(s, 0.0, 12.0, 0.5, 6.0), s)


def test_out_of_range_pixel_raises():
    with pytest.raises(mudet.ValidationError):
        mudet.gamma_transform(np.array([[0.2, 1.5]]))


def test_geometry():
    a = mudet.Obb(10, 10, 8, 4, 0)
    assert mudet.polygon_iou(a, a) == pytest.approx(1.0)
    b = mudet.Obb(12, 10, 8, 4, 0)
    assert mudet.polygon_iou(a, b) == pytest.approx(24 / 40)
    assert mudet.hbb_iou_from_distances([1, 1, 1, 1], [1, 1, 1, 1]) == 1.0
    box = mudet.Obb(20, 15, 12, 5, 30)
    enc = mudet.encode_obb(box, 21.0, 14.0)
    back = mudet.decode_obb(enc, 21.0, 14.0)
    for p, q in zip(sorted(box.vertices()), sorted(back.vertices())):
        assert math.dist(p, q) < 1e-6


def test_nms_and_average_precision():
    g = mudet.Obb(10, 10, 8, 4, 0)
    dets = [(g, 0.9), (mudet.Obb(10.5, 10, 8, 4, 0), 0.8), (mudet.Obb(50, 50, 8, 4, 0), 0.7)]
    kept = mudet.nms(dets, 0.45)
    assert [s for _, s in kept] == [0.9, 0.7]
    ap, curve = mudet.average_precision([(g, 0.9), (mudet.Obb(50, 50, 8, 4, 0), 0.8)], [g])
    assert ap == 1.0
    assert curve[-1][1:] == (0.5, 1.0)


def test_masks_are_exclusive():
    rng = np.random.default_rng(1)
    cr, ch = rng.uniform(size=(6, 7)), rng.uniform(size=(6, 7))
    easy, rgb, h = mudet.build_masks(cr, ch, 0.3)
    assert ((easy + rgb + h) <= 1).all()
    np.testing.assert_array_equal(easy, (cr > 0.3) & (ch > 0.3))


def test_focal_loss_and_tiling():
    assert mudet.focal_loss(1.0 - 1e-9, 1) < 1e-12
    assert mudet.focal_loss(0.3, 1) > mudet.focal_loss(0.7, 1)
    assert mudet.tile_origins(5184, 1024, 200) == [0, 824, 1648, 2472, 3296, 4120, 4160]


def test_gradcheck_one_trial():
    results = mudet.gradcheck(seed=1, trials=1)
    assert {r["name"] for r in results} >= {"focal_loss", "fuse", "micro_model"}
    assert all(r["passed"] for r in results)


def test_cli_synth(tmp_path):
    out = tmp_path / "synth"
    assert mudet.run_cli(["synth", "--out", str(out), "--scenes", "2", "--seed", "3"]) == 0
    labels = sorted((out / "labels").glob("*.txt"))
    assert len(labels) == 2
    anns = mudet.parse_annotations(labels[0].read_text())
    assert len(anns) > 0
    assert mudet.run_cli(["frobnicate"]) == 1
