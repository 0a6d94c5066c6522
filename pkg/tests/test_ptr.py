import pytest
import torch

from platerec import geometry as geo
from platerec.ptr import (PTR, AffineSTN, PTRConfig, ShapeMismatch, affine_stn_baseline, check_hexad,
                          count_parameters, hexad_quads, rectify_double, rectify_single,
                          vertices_from_offsets_double, vertices_from_offsets_single)


def test_identity_at_init():
    torch.manual_seed(0)
    x = torch.rand(2, 3, 64, 128)
    out, verts, ok = PTR()(x)
    assert out.shape == (2, 3, 24, 94) and ok.all()
    assert torch.allclose(verts, geo.unit_square(torch.float32).expand(2, 4, 2))
    assert (out - geo.resize(x, 94, 24)).abs().max() < 1e-6


def test_double_identity_at_init_is_split_resize():
    x = torch.rand(1, 3, 64, 128)
    out, _ = rectify_double(PTR(PTRConfig(layout="double")), x[0])
    top = geo.warp(x, geo.rect_theta(0, 0, 1, 0.5).expand(1, 8), 27, 24)
    bottom = geo.warp(x, geo.rect_theta(0, 0.5, 1, 1).expand(1, 8), 67, 24)
    assert out.shape == (3, 24, 94)
    assert torch.allclose(out, torch.cat([top, bottom], -1)[0], atol=1e-6)


def test_affine_stn_identity_at_init():
    x = torch.rand(2, 3, 64, 128)
    assert (AffineSTN()(x) - geo.resize(x, 94, 24)).abs().max() < 1e-6
    ident = torch.tensor([1.0, 0, 0, 0, 1, 0])
    assert torch.allclose(affine_stn_baseline(ident, x[0]), geo.resize(x[0], 94, 24))


def test_offsets_bounded():
    m = PTR()
    torch.nn.init.normal_(m.regressor.fc[-1].weight, std=10)
    off = m.estimate_offsets(torch.rand(3, 3, 64, 128))
    assert (off.abs() <= 0.5).all()


def test_regressor_shape_check():
    with pytest.raises(ShapeMismatch):
        PTR().estimate_offsets(torch.rand(1, 3, 60, 128))
    with pytest.raises(ShapeMismatch):
        vertices_from_offsets_single(torch.zeros(12))
    with pytest.raises(ShapeMismatch):
        vertices_from_offsets_double(torch.zeros(8))


def test_other_input_sizes_are_resized_for_regressor():
    out, _, _ = PTR()(torch.rand(1, 3, 50, 150))
    assert out.shape == (1, 3, 24, 94)


def test_hexad_split():
    hexad = vertices_from_offsets_double(torch.zeros(12))
    upper, lower = hexad_quads(hexad)
    assert upper.tolist() == [[0, 0], [1, 0], [1, 0.5], [0, 0.5]]
    assert lower.tolist() == [[0, 0.5], [1, 0.5], [1, 1], [0, 1]]
    check_hexad(hexad)
    bad = hexad.clone()
    bad[2, 1] = -0.5
    with pytest.raises(geo.GeometryError):
        check_hexad(bad)


def test_degenerate_prediction_falls_back():
    m = PTR()
    x = torch.rand(1, 3, 64, 128)
    verts = torch.tensor([[[0.5, 0.5]] * 4])
    out, ok = m.rectify_vertices(x, verts)
    assert not ok[0]
    assert torch.allclose(out, geo.resize(x, 94, 24), atol=1e-6)
    m.regressor.fc[-1].bias.data[:] = 100 * torch.tensor([1.0, 1, -1, 1, -1, -1, 1, -1])
    _, fell_back = rectify_single(m, x[0])
    assert fell_back and m.fallbacks == 1


def test_ptr_gradient_reaches_regressor():
    m = PTR()
    torch.nn.init.normal_(m.regressor.fc[-1].weight, std=0.01)
    x = torch.rand(2, 3, 64, 128)
    out, _, _ = m(x)
    out.square().mean().backward()
    assert m.regressor.fc[-1].weight.grad.abs().sum() > 0


def test_parameter_count():
    assert count_parameters(PTR()) < 300_000
