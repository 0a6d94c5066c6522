import json

import numpy as np
import pytest
import torch

from platerec import datagen as dg
from platerec import geometry as geo
from platerec.glyphs import MissingGlyphFont, bitmap, render_glyph


def _sample(**kw):
    base = dict(image="a.png", plate="皖A12345", layout="single", bbox=(50, 40, 150, 80),
                vertices=((50, 40), (150, 40), (150, 80), (50, 80)), seed=0, width=240, height=150)
    base.update(kw)
    return dg.PlateSample(**base)


def test_render_plate_single_and_double():
    img, meta = dg.render_plate(dg.PlateSpec("皖A12345", "single", scale=0.5))
    assert img.shape == (70, 220, 3) and img.dtype == np.float32
    assert 0 <= img.min() and img.max() <= 1
    assert meta["vertices"].shape == (4, 2)
    img, meta = dg.render_plate(dg.PlateSpec("皖A12345", "double", scale=0.5))
    assert img.shape == (110, 220, 3) and meta["vertices"].shape == (6, 2)
    assert meta["vertices"][2, 1] == pytest.approx(0.4 * 110)


def test_render_plate_deterministic_and_rejects_bad_glyphs():
    a, _ = dg.render_plate(dg.PlateSpec("京B99999"), seed=3)
    b, _ = dg.render_plate(dg.PlateSpec("京B99999"), seed=3)
    assert np.array_equal(a, b)
    with pytest.raises(KeyError):
        dg.render_plate(dg.PlateSpec("京BO9999"))


def test_double_rows_are_stretched_single_slices():
    boxes = dg.double_line_boxes()
    assert all(b[3] <= 0.4 * 220 for b in boxes[:2])
    assert all(b[1] >= 0.4 * 220 for b in boxes[2:])
    assert boxes[0][0] < boxes[1][0] and boxes[2][0] < boxes[6][0]


def test_glyph_rendering():
    g = render_glyph("A", 10, 20)
    assert g.shape == (20, 10) and 0 < g.mean() < 1
    assert bitmap("京").shape == bitmap("A").shape or bitmap("京").ndim == 2
    assert not np.array_equal(render_glyph("京", 16, 16), render_glyph("沪", 16, 16))


def test_missing_glyph_in_font():
    import glob
    fonts = glob.glob("/usr/share/fonts/**/DejaVuSans.ttf", recursive=True)
    if not fonts:
        pytest.skip("no TrueType font installed")
    with pytest.raises(MissingGlyphFont):
        render_glyph("京", 16, 16, fonts[0])
    assert render_glyph("A", 16, 16, fonts[0]).max() > 0.5


def test_blur():
    img = np.random.default_rng(0).random((20, 30, 3)).astype(np.float32)
    assert np.array_equal(dg.augment_blur(img, "motion", 0), img)
    const = np.full((20, 30, 3), 0.4, dtype=np.float32)
    for kind in ("motion", "defocus"):
        assert np.allclose(dg.augment_blur(const, kind, 2.0), 0.4, atol=1e-6)
        assert dg.augment_blur(img, kind, 2.0).std() < img.std()
    assert dg.motion_kernel(3, 0.3).sum() == pytest.approx(1)
    with pytest.raises(ValueError):
        dg.augment_blur(img, "zoom", 1.0)
    with pytest.raises(ValueError):
        dg.augment_blur(img, "motion", -1)


def test_composite_axis_aligned():
    tpl = np.full((10, 20, 3), 0.8, dtype=np.float32)
    bg = np.zeros((30, 40, 3), dtype=np.float32)
    dst = [[10, 5], [30, 5], [30, 15], [10, 15]]
    scene, s = dg.composite(tpl, bg, dst, plate="皖A12345")
    assert np.allclose(scene[5:15, 10:30], 0.8)
    assert scene[:5].max() == 0 and scene[:, :10].max() == 0 and scene[16:].max() == 0
    assert s.bbox == (10, 5, 30, 15) and not s.clipped


def test_composite_double_four_points_gives_planar_hexad():
    tpl = np.zeros((110, 220, 3), dtype=np.float32)
    bg = np.zeros((150, 240, 3), dtype=np.float32)
    dst = np.array([[40, 30], [200, 40], [190, 120], [50, 110]], dtype=np.float64)
    _, s = dg.composite(tpl, bg, dst, layout="double", plate="皖A12345")
    v = np.array(s.vertices)
    assert v.shape == (6, 2)
    # shared vertices lie on the side edges
    for a, b, m in ((0, 4, 2), (1, 5, 3)):
        d = v[b] - v[a]
        e = v[m] - v[a]
        assert abs(d[0] * e[1] - d[1] * e[0]) < 1e-8


def test_vertex_crop_of_frontal_plate_reproduces_template():
    tpl, _ = dg.render_plate(dg.PlateSpec("皖A12345", scale=94 * 2 / 440))
    bg = np.zeros((100, 300, 3), dtype=np.float32)
    h, w = tpl.shape[:2]
    dst = [[50, 20], [50 + w, 20], [50 + w, 20 + h], [50, 20 + h]]
    scene, s = dg.composite(tpl, bg, dst)
    strip = dg.vertex_crop(dg._to_chw(scene), s)
    ref = geo.resize(dg._to_chw(tpl), 94, 24)
    assert (strip - ref).abs().mean() < 0.02


def test_perturbation_statistics():
    s = _sample()
    draws = np.array([dg.perturb_localization(s, 4.0, seed=i).vertices[0][0] - 50 for i in range(3000)])
    assert 3.7 < draws.std() < 4.3 and abs(draws.mean()) < 3 * 4 / np.sqrt(3000)


def test_perturbation_edge_cases():
    s = _sample()
    assert dg.perturb_localization(s, 0.0) == s
    with pytest.raises(ValueError):
        dg.perturb_localization(s, -1)
    p = dg.perturb_localization(s, 40.0, seed=1)
    assert p.bbox[2] > p.bbox[0] and p.bbox[3] > p.bbox[1]
    assert 0 <= min(p.bbox) and p.bbox[2] <= 240 and p.bbox[3] <= 150
    only_box = dg.perturb_localization(s, 4.0, seed=1, vertex_sigma=0.0)
    assert only_box.vertices == s.vertices and only_box.bbox != s.bbox


def test_iou_and_audit():
    assert dg.iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert dg.iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1
    with pytest.raises(ValueError):
        dg.iou((0, 0, 0, 1), (0, 0, 1, 1))
    s = _sample()
    ok, bad = dg.audit_labels([s, s], [(50, 40, 150, 80), (100, 40, 200, 80)])
    assert len(ok) == 1 and len(bad) == 1


def test_manifest_roundtrip(tmp_path):
    samples = [_sample(image=f"{i}.png", seed=i) for i in range(20)]
    path = tmp_path / "m.jsonl"
    dg.write_manifest(samples, path, split_seed=0)
    back = dg.read_manifest(path)
    assert [b.seed for b in back] == list(range(20))
    assert {b.split for b in back} <= {"train", "valid", "test"}
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert list(first) == list(dg.MANIFEST_FIELDS)


@pytest.mark.parametrize("line", ["{not json", '{"image": "a"}',
                                  '{"image":"a","plate":"x","layout":"single","bbox":[1,2],'
                                  '"vertices":[],"seed":0,"width":1,"height":1}'])
def test_manifest_malformed(tmp_path, line):
    path = tmp_path / "m.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(dg.MalformedRecord):
        dg.read_manifest(path)


def test_split_ratios():
    splits = [dg.split_of(str(i)) for i in range(5000)]
    assert 0.77 < splits.count("train") / 5000 < 0.83
    assert dg.split_of("x", 1) == dg.split_of("x", 1)


def test_scene_determinism():
    cfg = dg.SceneConfig()
    a, sa = dg.make_scene(cfg, 7)
    b, sb = dg.make_scene(cfg, 7)
    assert np.array_equal(a, b) and sa == sb
    assert a.shape == (150, 240, 3)
    assert bool(geo.quad_is_valid(torch.tensor(sa.vertices)))


def test_province_weights():
    rng = np.random.default_rng(0)
    w = np.zeros(31)
    w[5] = 1
    assert all(dg.random_plate(rng, w)[0] == "晋" for _ in range(20))


def test_plate_set_tensors():
    data = dg.synthetic_set(4, seed=1)
    assert data.crops.shape == (4, 3, 64, 128) and data.strips.shape == (4, 3, 24, 94)
    assert data.quads.shape == (4, 4, 2) and len(data.labels) == 4
    sub = data.subset([1, 3])
    assert sub.labels == [data.labels[1], data.labels[3]]
    double = dg.synthetic_set(2, dg.SceneConfig(layout="double"), seed=1)
    assert double.quads.shape == (2, 6, 2) and double.layout == "double"


def test_sample_requires_right_vertex_count():
    with pytest.raises(ValueError):
        _sample(layout="double")
