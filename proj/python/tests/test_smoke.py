# Copyright (c) 2026, The sgda3d Authors
# SPDX-License-Identifier: Apache-2.0

import numpy as np
import pytest

import sgda3d


def test_parameter_count():
    assert sgda3d.parameter_count(64) == 13376
    assert sgda3d.parameter_count(64, fuse="mean_only") == 13376 - 2 * 64 * 64
    with pytest.raises(sgda3d.ConfigError):
        sgda3d.parameter_count(64, reduction=5)


def test_module_forward_and_parameters():
    m = sgda3d.SgdaModule(4, groups=2, adapters=2, reduction=2, seed=3)
    params = m.parameters()
    assert sum(p.size for p in params.values()) == m.parameter_count
    x = np.random.default_rng(0).uniform(-1, 1, (4, 8, 8, 8))
    y = m.forward(x)
    assert y.shape == x.shape
    assert np.all(np.isfinite(y))
    assert np.array_equal(m.forward(x), y)

    for name, p in params.items():
        m.set_parameter(name, np.zeros_like(p))
    # Every excitation is sigmoid(0) and the attention terms vanish.
    np.testing.assert_allclose(m.forward(x), 0.5 * x, atol=1e-15)

    with pytest.raises(sgda3d.DimensionError):
        m.forward(np.zeros((3, 8, 8, 8)))
    with pytest.raises(sgda3d.UsageError):
        m.set_parameter("nope", np.zeros(1))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    m = sgda3d.SgdaModule(4, groups=2, adapters=2, reduction=2, fuse="mean_only", seed=5)
    for name, p in m.parameters().items():
        m.set_parameter(name, rng.uniform(-1, 1, p.shape))
    x = rng.uniform(-1, 1, (4, 4, 4, 4))
    g = rng.uniform(-1, 1, x.shape)
    gx, gp = m.backward(x, g)
    assert gx.shape == x.shape
    assert set(gp) == set(m.parameters())

    def loss(v):
        return float(np.sum(m.forward(v) * g))

    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 2, 3, 1), (3, 3, 1, 2)]:
        e = np.zeros_like(x)
        e[idx] = h
        numeric = (loss(x + e) - loss(x - e)) / (2 * h)
        assert abs(numeric - gx[idx]) < 1e-6 * max(1.0, abs(numeric))


def test_froc_worked_example():
    anns = [("A", 10, 10, 10, 10), ("A", 30, 30, 30, 8), ("B", 20, 20, 20, 6)]
    cands = [
        ("A", 11, 10, 10, 0.9),
        ("A", 50, 50, 50, 0.8),
        ("A", 30, 30, 33, 0.7),
        ("B", 20, 20, 24, 0.6),
        ("B", 5, 5, 5, 0.5),
    ]
    r = sgda3d.froc(cands, anns, 2)
    assert r["operating_points"] == [0.125, 0.25, 0.5, 1, 2, 4, 8]
    np.testing.assert_allclose(r["sensitivities"], [1 / 3, 1 / 3] + [2 / 3] * 5)
    assert abs(r["average"] - 4 / 7) < 1e-12
    assert len(r["curve"]) == 5
    assert sgda3d.froc([], anns, 2)["average"] == 0.0
    with pytest.raises(sgda3d.DataError):
        sgda3d.froc(cands, [], 2)


def test_preprocessing_helpers():
    w = sgda3d.window(np.array([-3000.0, -1200.0, -300.0, 600.0, 2000.0]))
    assert w.tolist() == [0, 0, 128, 255, 255]

    vol = np.full((6, 7, 8), 3.0)
    p = sgda3d.extract_patch(vol, (4, -2, 0), 8)
    assert p.shape == (8, 8, 8)
    assert p[0, 2, 0] == 3.0
    assert p[0, 0, 0] == 170.0
    assert p[7, 7, 7] == 170.0

    z, y, x = np.meshgrid(np.arange(5), np.arange(6), np.arange(7), indexing="ij")
    ramp = 2.0 + 1.5 * x - 0.5 * y + 0.25 * z
    out = sgda3d.resample_isotropic(ramp, (1.0, 1.0, 2.0))
    assert out.shape == (10, 6, 7)
    expect = 2.0 + 1.5 * x[0] - 0.5 * y[0]
    for k in range(10):
        np.testing.assert_allclose(out[k], expect + 0.25 * min(k / 2, 4), atol=1e-12)


def test_read_mhd(tmp_path):
    data = np.arange(24, dtype="<i2").reshape(2, 3, 4) - 1000
    (tmp_path / "v.raw").write_bytes(data.tobytes())
    (tmp_path / "v.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 4 3 2\nElementType = MET_SHORT\n"
        "ElementSpacing = 0.5 0.5 2\nOffset = 1 2 3\nElementDataFile = v.raw\n"
    )
    vox, spacing, offset = sgda3d.read_mhd(str(tmp_path / "v.mhd"))
    assert np.array_equal(vox, data.astype(float))
    assert list(spacing) == [0.5, 0.5, 2.0]
    assert list(offset) == [1.0, 2.0, 3.0]
    with pytest.raises(sgda3d.Error):
        sgda3d.read_mhd(str(tmp_path / "missing.mhd"))


def test_gradcheck_suite():
    r = sgda3d.gradcheck_suite()
    assert r["passed"]
    assert r["worst"] < 1e-4
