import numpy as np
import pytest

from echodl import patches as pt
from echodl.patches import PatchConfig, aggregate, coverage, extract, extract_all

from conftest import random_stack


def naive_patch(x, p, r0, c0, wrap=True):
    """Double-loop reference: column-major pixels, (real, imag) column per echo."""
    n, h, w = x.shape
    out = np.zeros((p * p, 2 * n))
    for j in range(n):
        for c in range(p):
            for r in range(p):
                v = x[j, (r0 + r) % h, (c0 + c) % w]
                out[r + c * p, 2 * j] = v.real
                out[r + c * p, 2 * j + 1] = v.imag
    return out


def test_constant_image_patch():
    x = np.full((3, 16, 16), 2.5 + 0j)
    pm = extract(x, PatchConfig(12, 1), 17)
    assert np.all(pm.values[:, 0::2] == 2.5)
    assert np.all(pm.values[:, 1::2] == 0)


def test_single_patch_when_stride_is_image_side(rng):
    x = random_stack(rng, 2, 16, 16)
    for boundary in pt.BOUNDARIES:
        cfg = PatchConfig(12, 16, boundary)
        assert pt.n_patches(cfg, (16, 16)) == 1
        pm = extract(x, cfg, 0)
        np.testing.assert_array_equal(pm.values, naive_patch(x.data, 12, 0, 0))


def test_extract_matches_naive_wraparound(rng):
    x = random_stack(rng, 2, 16, 16)
    cfg = PatchConfig(12, 1, "wraparound")
    block = extract_all(x, cfg)
    assert block.shape == (144, 256, 4)
    for i in range(256):
        r0, c0 = divmod(i, 16)
        ref = naive_patch(x.data, 12, r0, c0)
        np.testing.assert_array_equal(block[:, i, :], ref)
        np.testing.assert_array_equal(extract(x, cfg, i).values, ref)


def test_extract_interior_origins(rng):
    x = random_stack(rng, 1, 20, 18)
    cfg = PatchConfig(6, 4, "interior-only")
    orow, ocol = pt.patch_origins(cfg, (20, 18))
    assert list(orow) == [0, 4, 8, 12] and list(ocol) == [0, 4, 8, 12]
    block = extract_all(x, cfg)
    for i in range(block.shape[1]):
        a, b = divmod(i, ocol.size)
        np.testing.assert_array_equal(block[:, i, :], naive_patch(x.data, 6, orow[a], ocol[b]))


def test_extract_index_error(rng):
    x = random_stack(rng, 1, 16, 16)
    with pytest.raises(IndexError):
        extract(x, PatchConfig(12, 4), 16)


def test_config_validation():
    with pytest.raises(ValueError):
        PatchConfig(12, 1, "mirror")
    with pytest.raises(ValueError):
        pt.patch_origins(PatchConfig(20, 1), (16, 16))


@pytest.mark.parametrize(
    "cfg,dims",
    [
        (PatchConfig(12, 1, "wraparound"), (16, 16)),
        (PatchConfig(5, 2, "interior-only"), (13, 11)),
        (PatchConfig(4, 3, "wraparound"), (10, 9)),
    ],
)
def test_extract_aggregate_adjoint(rng, cfg, dims):
    x = random_stack(rng, 2, *dims)
    block = extract_all(x, cfg)
    Z = rng.standard_normal(block.shape)
    lhs = np.sum(block * Z)
    back = aggregate(Z, cfg, dims).data
    # real inner product on the (real, imag) representation
    rhs = np.sum(x.data.real * back.real + x.data.imag * back.imag)
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_aggregate_of_extract_is_coverage_weighting(rng):
    dims = (20, 20)
    for cfg in (PatchConfig(6, 2, "wraparound"), PatchConfig(6, 4, "interior-only")):
        x = random_stack(rng, 2, *dims)
        back = aggregate(extract_all(x, cfg), cfg, dims).data
        np.testing.assert_allclose(back, coverage(cfg, dims) * x.data, atol=1e-12)


def test_aggregate_single_patch_inverts_extract(rng):
    x = random_stack(rng, 2, 16, 16)
    cfg = PatchConfig(12, 16, "interior-only")
    back = aggregate([extract(x, cfg, 0)], cfg, (16, 16)).data
    np.testing.assert_array_equal(back[:, :12, :12], x.data[:, :12, :12])
    assert not np.any(back[:, 12:, :]) and not np.any(back[:, :, 12:])


def test_aggregate_rejects_incomplete_set(rng):
    x = random_stack(rng, 1, 16, 16)
    cfg = PatchConfig(12, 4)
    with pytest.raises(ValueError):
        aggregate([extract(x, cfg, 0)], cfg, (16, 16))


def test_aggregate_patchmatrix_list_equals_block(rng):
    x = random_stack(rng, 2, 16, 16)
    cfg = PatchConfig(12, 4)
    pms = [extract(x, cfg, i) for i in range(pt.n_patches(cfg, (16, 16)))]
    np.testing.assert_allclose(
        aggregate(pms[::-1], cfg, (16, 16)).data, aggregate(extract_all(x, cfg), cfg, (16, 16)).data
    )


def brute_coverage(cfg, dims):
    h, w = dims
    cov = np.zeros(dims)
    orow, ocol = pt.patch_origins(cfg, dims)
    for r0 in orow:
        for c0 in ocol:
            for r in range(cfg.patch_size):
                for c in range(cfg.patch_size):
                    cov[(r0 + r) % h, (c0 + c) % w] += 1
    return cov


def test_coverage_wraparound_stride1_is_constant():
    for dims in [(12, 12), (16, 20), (33, 12)]:
        assert np.all(coverage(PatchConfig(12, 1), dims) == 144)


def test_coverage_tiling():
    assert np.all(coverage(PatchConfig(12, 12, "interior-only"), (24, 24)) == 1)


def test_coverage_brute_force_256():
    cfg = PatchConfig(12, 4, "interior-only")
    np.testing.assert_array_equal(coverage(cfg, (256, 256)), brute_coverage(cfg, (256, 256)))


def test_uniform_coverage_detection():
    assert pt.uniform_coverage(PatchConfig(12, 4), (256, 256)) == 9
    assert pt.uniform_coverage(PatchConfig(12, 5), (256, 256)) is None


def test_isometry_each_entry_is_one_pixel(rng):
    # extract has exactly one nonzero per row in matrix form
    x = np.zeros((1, 16, 16), complex)
    x[0, 3, 5] = 1.0
    block = extract_all(x, PatchConfig(12, 1))
    assert np.count_nonzero(block) == 144
    assert set(np.unique(block)) == {0.0, 1.0}
