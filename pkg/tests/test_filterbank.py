import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperdet.errors import (GroupResolutionError, InvalidImageError, KernelInvariantError,
                             KernelManifestError)
from hyperdet.filterbank import (BACKENDS, GROUPS, FilterKernel, apply_kernel, default_bank,
                                 get_group, group_of, group_residual, load_kernels, make_views,
                                 parse_kernels)
from oracles import indexed_residual, naive_group_residual, naive_residual, reflect_index

BANK = default_bank()


def test_bank_has_thirty_zero_sum_kernels():
    assert len(BANK) == 30
    assert BANK.ids == list(range(1, 31))
    for k in BANK:
        assert abs(np.asarray(k.weights).sum()) == 0.0
        assert k.normalizer > 0


def test_group_partition():
    ids = [i for g in GROUPS for i in g.kernel_ids]
    assert sorted(ids) == list(range(1, 31))
    assert [len(g.kernel_ids) for g in GROUPS] == [8, 4, 8, 5, 5]
    assert group_of(1) == 1 and group_of(12) == 2 and group_of(20) == 3 and group_of(25) == 4
    assert group_of(30) == 5


@pytest.mark.parametrize("kid, normalizer", [(1, 1), (9, 2), (13, 3), (21, 4), (26, 12)])
def test_normalizers_by_class(kid, normalizer):
    assert BANK[kid].normalizer == normalizer


def test_square_3x3_and_5x5_values():
    sq3 = np.asarray(BANK[21].weights)
    expected = np.zeros((5, 5))
    expected[1:4, 1:4] = [[-1, 2, -1], [2, -4, 2], [-1, 2, -1]]
    np.testing.assert_array_equal(sq3, expected)
    sq5 = np.asarray(BANK[26].weights)
    np.testing.assert_array_equal(sq5[2], [-2, 8, -12, 8, -2])
    np.testing.assert_array_equal(sq5[0], [-1, 2, -2, 2, -1])


def test_first_order_kernel_residual_on_ramp():
    # On a horizontal unit ramp the two vertical neighbours see no change and the
    # six others see a step of +1 or -1, three each way.
    img = np.tile(np.arange(6, dtype=float), (6, 1))
    values = []
    for kid in range(1, 9):
        r = apply_kernel(img, BANK[kid])[2:4, 2:4, 0]
        assert np.all(r == r[0, 0])
        values.append(r[0, 0])
    assert sorted(values) == [-1, -1, -1, 0, 0, 1, 1, 1]


def test_zero_sum_violation_rejected():
    w = np.zeros((5, 5))
    w[2, 2] = 1.0
    with pytest.raises(KernelInvariantError):
        FilterKernel(99, w, 1.0)


def test_manifest_errors(tmp_path):
    text = BANK.to_text()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    with pytest.raises(KernelManifestError):
        parse_kernels("\n".join(lines[:-1]), "short")
    with pytest.raises(KernelManifestError):
        parse_kernels("\n".join(lines + lines[-1:]), "dup")
    p = tmp_path / "k.txt"
    p.write_text(text)
    assert load_kernels(p).ids == BANK.ids


def test_group_resolution_error():
    with pytest.raises(GroupResolutionError):
        BANK.resolve(get_group(1).__class__(9, (31, 32), "x"))


def test_invalid_image():
    with pytest.raises(InvalidImageError):
        group_residual(np.full((6, 6, 3), np.nan), get_group(1))


def test_reflect_index():
    assert [reflect_index(i, 4) for i in (-2, -1, 0, 3, 4, 5)] == [2, 1, 0, 3, 2, 1]


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_kernel_matches_naive_oracle(backend, rng):
    img = rng.random((7, 9, 3))
    for kid in (1, 9, 13, 21, 27):
        k = BANK[kid]
        np.testing.assert_allclose(apply_kernel(img, k, backend=backend),
                                   naive_residual(img, k.weights, k.normalizer), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_group_residual_matches_oracle(backend, rng):
    img = rng.random((11, 6, 3))
    for g in GROUPS:
        ks = [(BANK[i].weights, BANK[i].normalizer) for i in g.kernel_ids]
        got = group_residual(img, g, backend=backend).pixels
        np.testing.assert_allclose(got, naive_group_residual(img, ks), rtol=1e-12, atol=1e-14)


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled core not built")
    img = rng.random((32, 32, 3))
    for g in GROUPS:
        a = group_residual(img, g, backend="python").pixels
        b = group_residual(img, g, backend="compiled").pixels
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_make_views_layout(rng):
    img = rng.random((8, 8, 3))
    views = make_views(img)
    assert len(views) == 6
    assert [v.source_group for v in views[:5]] == [1, 2, 3, 4, 5]
    np.testing.assert_array_equal(views[5].pixels, img)


def test_grayscale_input(rng):
    img = rng.random((6, 6))
    r = group_residual(img, get_group(2)).pixels
    assert r.shape == (6, 6, 1)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-5, 5, allow_nan=False), h=st.integers(3, 10), w=st.integers(3, 10))
def test_constant_images_have_zero_residual(c, h, w):
    img = np.full((h, w, 3), c)
    for g in GROUPS:
        assert not np.any(group_residual(img, g).pixels)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_residual_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.random((6, 7, 3)), r.random((6, 7, 3))
    g = GROUPS[seed % 5]
    lhs = group_residual(a * x + b * y, g).pixels
    rhs = a * group_residual(x, g).pixels + b * group_residual(y, g).pixels
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_residual_commutes_with_horizontal_flip_for_square_kernels(seed):
    # Square kernels are symmetric, so mirroring the input mirrors the output.
    x = np.random.default_rng(seed).random((7, 7, 3))
    k = BANK[21]
    np.testing.assert_allclose(apply_kernel(x[:, ::-1], k), apply_kernel(x, k)[:, ::-1], atol=1e-12)


def test_indexed_oracle_agrees_with_loop_oracle(rng):
    img = rng.random((5, 8, 2))
    for kid in (2, 11, 17, 24, 30):
        k = BANK[kid]
        np.testing.assert_allclose(indexed_residual(img, k.weights, k.normalizer),
                                   naive_residual(img, k.weights, k.normalizer), rtol=1e-13, atol=1e-15)


def test_impulse_response_is_flipped_kernel():
    # Cross-correlation stamps the point-reflected kernel around an impulse.
    # Wide kernels need a larger canvas so the mirrored border stays out of reach.
    for kid, n in ((1, 5), (5, 5), (9, 5), (13, 9), (26, 9)):
        img = np.zeros((n, n))
        img[n // 2, n // 2] = 1.0
        k = BANK[kid]
        c = n // 2
        out = apply_kernel(img, k)[c - 2:c + 3, c - 2:c + 3, 0]
        np.testing.assert_array_equal(out, np.asarray(k.weights)[::-1, ::-1] / k.normalizer)


def test_group_is_mean_of_kernel_residuals(rng):
    img = rng.random((9, 9, 3))
    g = get_group(3)
    mean = np.mean([apply_kernel(img, BANK[i]) for i in g.kernel_ids], axis=0)
    np.testing.assert_allclose(group_residual(img, g).pixels, mean, rtol=1e-13, atol=1e-15)


def test_first_two_groups_coincide_under_averaging(rng):
    # Both averages reduce to (mean of the 8 neighbours) - centre.
    img = rng.random((10, 10, 3))
    a = group_residual(img, get_group(1)).pixels
    b = group_residual(img, get_group(2)).pixels
    np.testing.assert_allclose(a, b, atol=1e-14)
