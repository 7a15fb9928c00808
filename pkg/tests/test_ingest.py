import gzip
import struct

import numpy as np
import pytest
from sklearn.decomposition import PCA

from reluzono.errors import BadMagic, InvalidParameter, NotEnoughExamples, TruncatedPayload, UnsupportedElementType
from reluzono.ingest import (
    IdxTensor,
    WhiteningPCA,
    binary_pixels,
    build_binary_task,
    encode_idx,
    parse_idx,
    read_idx,
    write_idx,
)


def fake_archive(n=40, side=4, seed=0):
    """Random byte images whose label is the image index mod 3."""
    gen = np.random.default_rng(seed)
    images = gen.integers(0, 256, size=(n, side, side), dtype=np.uint8)
    labels = (np.arange(n) % 3).astype(np.uint8)
    return IdxTensor(images.shape, images.reshape(-1)), IdxTensor(labels.shape, labels)


def test_parse_unsigned_byte_header():
    raw = bytes([0, 0, 0x08, 2]) + struct.pack(">II", 2, 3) + bytes(range(6))
    tensor = parse_idx(raw)
    assert tensor.dims == (2, 3)
    assert tensor.rank == 2
    np.testing.assert_array_equal(tensor.array(), [[0, 1, 2], [3, 4, 5]])


def test_parse_big_endian_float():
    raw = bytes([0, 0, 0x0D, 1]) + struct.pack(">I", 2) + struct.pack(">ff", 1.5, -2.0)
    np.testing.assert_array_equal(parse_idx(raw).array(), [1.5, -2.0])


def test_parse_big_endian_int16():
    raw = bytes([0, 0, 0x0B, 1]) + struct.pack(">I", 2) + struct.pack(">hh", -300, 7)
    np.testing.assert_array_equal(parse_idx(raw).array(), [-300, 7])


def test_bad_magic():
    with pytest.raises(BadMagic):
        parse_idx(bytes([1, 0, 0x08, 1, 0, 0, 0, 0]))


def test_unknown_element_type():
    with pytest.raises(UnsupportedElementType):
        parse_idx(bytes([0, 0, 0x0A, 1]) + struct.pack(">I", 1) + b"\x00")


def test_truncated_payload():
    raw = bytes([0, 0, 0x08, 1]) + struct.pack(">I", 10) + bytes(4)
    with pytest.raises(TruncatedPayload):
        parse_idx(raw)


def test_truncated_header():
    with pytest.raises(TruncatedPayload):
        parse_idx(bytes([0, 0, 0x08, 3]) + struct.pack(">I", 1))


@pytest.mark.parametrize("suffix", [".idx", ".idx.gz"])
def test_write_and_read_file(tmp_path, suffix):
    array = np.arange(24, dtype=np.int32).reshape(2, 3, 4) - 5
    path = tmp_path / f"t{suffix}"
    write_idx(array, path, 0x0C)
    tensor = read_idx(path)
    assert tensor.type_code == 0x0C
    np.testing.assert_array_equal(tensor.array(), array)


def test_gzip_file_is_really_compressed(tmp_path):
    path = tmp_path / "t.gz"
    write_idx(np.zeros((2, 2), dtype=np.uint8), path)
    with gzip.open(path, "rb") as f:
        assert f.read(4) == bytes([0, 0, 0x08, 2])


def test_encode_rejects_unknown_type():
    with pytest.raises(UnsupportedElementType):
        encode_idx(np.zeros(3), 0x01)


def test_pca_components_are_orthonormal_and_sign_fixed():
    gen = np.random.default_rng(1)
    X = gen.standard_normal((50, 6)) @ gen.standard_normal((6, 6))
    pca = WhiteningPCA.fit(X, 4)
    np.testing.assert_allclose(pca.components @ pca.components.T, np.eye(4), atol=1e-10)
    for row in pca.components:
        assert row[np.abs(row).argmax()] > 0


def test_whitened_coordinates_have_unit_variance():
    gen = np.random.default_rng(2)
    X = gen.standard_normal((80, 5)) * [5.0, 3.0, 1.0, 0.5, 0.1]
    pca = WhiteningPCA.fit(X, 3)
    Z = pca.transform(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(Z.std(axis=0, ddof=1), 1.0, atol=1e-10)


def test_whitening_agrees_with_sklearn_up_to_sign():
    gen = np.random.default_rng(4)
    X = gen.standard_normal((30, 6)) * [4.0, 2.0, 1.0, 1.0, 0.5, 0.2]
    ours = WhiteningPCA.fit(X, 3).transform(X)
    theirs = PCA(n_components=3, whiten=True, svd_solver="full").fit_transform(X)
    signs = np.sign((ours * theirs).sum(axis=0))
    np.testing.assert_allclose(ours, theirs * signs, atol=1e-8)


def test_pca_rejects_too_many_components():
    with pytest.raises(InvalidParameter):
        WhiteningPCA.fit(np.random.default_rng(5).standard_normal((3, 6)), 4)


def test_full_pca_reconstructs():
    gen = np.random.default_rng(3)
    X = gen.standard_normal((10, 4))
    pca = WhiteningPCA.fit(X, 4)
    np.testing.assert_allclose(pca.reconstruct(pca.project(X)), X, atol=1e-10)


def test_pca_needs_two_examples():
    with pytest.raises(NotEnoughExamples):
        WhiteningPCA.fit(np.ones((1, 3)), 1)


def test_binary_pixels_keeps_two_classes_in_order():
    images, labels = fake_archive()
    pixels, y = binary_pixels(images, labels, 0, 2)
    kept = [i for i in range(40) if i % 3 != 1]
    assert pixels.shape == (len(kept), 16)
    np.testing.assert_array_equal(y, [1.0 if i % 3 == 2 else 0.0 for i in kept])
    assert pixels.min() >= 0.0 and pixels.max() <= 1.0


def test_build_binary_task():
    images, labels = fake_archive()
    ds = build_binary_task(images, labels, 0, 2, pca_dims=3, n=10)
    assert (ds.n, ds.d, ds.use_bias) == (10, 3, True)
    assert set(np.unique(ds.y)) <= {0.0, 1.0}


def test_build_binary_task_needs_enough_examples():
    images, labels = fake_archive()
    with pytest.raises(NotEnoughExamples):
        build_binary_task(images, labels, 0, 2, pca_dims=3, n=1000)


def test_same_class_twice_is_rejected():
    images, labels = fake_archive()
    with pytest.raises(InvalidParameter):
        binary_pixels(images, labels, 1, 1)
