import struct

import numpy as np
import pytest

from clgvae import data
from clgvae.data import (FactorDataset, FactorSpec, fixed_factor_batch, fixed_factor_indices,
                         generate, read_dataset, render_shape, shape_area, train_test_split,
                         write_dataset)


@pytest.fixture(scope="module")
def ds():
    return generate("mini-dsprites", 32, 0)


def test_default_profile_is_exhaustive(ds):
    assert len(ds) == 768 and ds.images.shape == (768, 32, 32)
    assert ds.spec.names == ("shape", "scale", "pos_x", "pos_y")
    combos = {tuple(r) for r in ds.factors}
    assert len(combos) == 768 == ds.spec.size
    for k, card in enumerate(ds.spec.cardinalities):
        counts = np.bincount(ds.factors[:, k], minlength=card)
        assert np.all(counts == len(ds) // card)


def test_images_binary_nonempty_and_inside_frame(ds):
    assert set(np.unique(ds.images)) <= {0, 255}
    assert np.all(ds.images.reshape(len(ds), -1).max(axis=1) == 255)
    pos = data._positions(32, 8, rotated=False)
    r_max = data.EXTENT * 32 * data.SCALES[-1]
    assert pos.min() - r_max >= 0 and pos.max() + r_max <= 32


def test_generation_is_deterministic(ds):
    again = generate("mini-dsprites", 32, 0)
    assert data.dataset_bytes(again) == data.dataset_bytes(ds)


def test_smallest_centered_square_area():
    side = 32
    r = data.EXTENT * side * data.SCALES[0]
    img = render_shape("square", r, side / 2, side / 2, 0.0, side)
    count = int(np.count_nonzero(img))
    analytic = shape_area("square", r)
    assert abs(count - analytic) <= 0.1 * analytic


@pytest.mark.parametrize("shape", data.SHAPES)
def test_render_area_tracks_analytic(shape):
    r = 12.3
    img = render_shape(shape, r, 31.7, 30.2, 0.0, 64)
    assert abs(np.count_nonzero(img) - shape_area(shape, r)) <= 0.1 * shape_area(shape, r)


def test_other_sides_and_rotation_profile():
    small = generate("mini-dsprites", 16)
    assert small.images.shape == (768, 16, 16)
    rot = generate("mini-dsprites-rot", 16)
    assert len(rot) == 768 * 8 and rot.spec.num_factors == 5
    assert np.all(rot.images.reshape(len(rot), -1).max(axis=1) == 255)


def test_bad_profile_and_side():
    with pytest.raises(ValueError, match="mini-dsprites"):
        generate("nope")
    with pytest.raises(ValueError):
        generate("mini-dsprites", 20)


def test_factor_spec_validation():
    with pytest.raises(ValueError):
        FactorSpec(("a", "b"), (2,))
    with pytest.raises(ValueError):
        FactorSpec(("a",), (0,))


def test_roundtrip(tmp_path, ds):
    path = tmp_path / "d.clgd"
    crc = write_dataset(ds, path)
    back = read_dataset(path)
    assert back == ds and back.spec.names == ds.spec.names
    assert crc == data.dataset_crc(ds)
    write_dataset(back, tmp_path / "e.clgd")
    assert (tmp_path / "e.clgd").read_bytes() == path.read_bytes()


def test_header_layout(tmp_path, ds):
    path = tmp_path / "d.clgd"
    write_dataset(ds, path)
    blob = path.read_bytes()
    assert blob[:4] == b"CLGD"
    assert struct.unpack_from("<HH4HHHQ", blob, 4) == (1, 4, 3, 4, 8, 8, 32, 32, 768)
    assert len(blob) == 4 + 4 + 8 + 12 + 768 * 1024 + 768 * 4 * 2 + 4


def test_corruptions_are_reported(tmp_path, ds):
    path = tmp_path / "d.clgd"
    write_dataset(ds, path)
    blob = bytearray(path.read_bytes())

    bad = bytearray(blob)
    bad[0] ^= 0xFF
    (tmp_path / "m").write_bytes(bad)
    with pytest.raises(ValueError, match="bad magic.*offset 0"):
        read_dataset(tmp_path / "m")

    bad = bytearray(blob)
    struct.pack_into("<Q", bad, 4 + 4 + 8 + 4, 769)
    (tmp_path / "t").write_bytes(bad)
    with pytest.raises(ValueError, match="truncated.*offset"):
        read_dataset(tmp_path / "t")

    bad = bytearray(blob)
    bad[5000] ^= 0x01
    (tmp_path / "c").write_bytes(bad)
    with pytest.raises(ValueError, match="checksum mismatch at offset"):
        read_dataset(tmp_path / "c")

    (tmp_path / "s").write_bytes(blob[:100])
    with pytest.raises(ValueError, match="truncated"):
        read_dataset(tmp_path / "s")


def test_fixed_factor_batch_shares_value(ds):
    rng = np.random.default_rng(0)
    for k in range(ds.spec.num_factors):
        idx, v = fixed_factor_indices(ds, k, 64, rng)
        assert np.all(ds.factors[idx, k] == v)
        assert len(np.unique(idx)) == 64
        others = np.delete(ds.factors[idx], k, axis=1)
        assert len({tuple(r) for r in others}) > 1
    imgs, v = fixed_factor_batch(ds, 0, 1, rng)
    assert imgs.shape == (1, 32, 32)


def test_fixed_factor_batch_errors(ds):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="cannot draw"):
        fixed_factor_batch(ds, 0, 257, rng)
    with pytest.raises(IndexError):
        fixed_factor_batch(ds, 9, 1, rng)


def test_fixed_factor_value_frequencies(ds):
    rng = np.random.default_rng(1)
    draws = 10_000
    for k in (0, 2):
        card = ds.spec.cardinalities[k]
        counts = np.bincount([fixed_factor_indices(ds, k, 1, rng)[1] for _ in range(draws)],
                             minlength=card)
        p = 1.0 / card
        sigma = np.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) <= 5 * sigma)


def test_train_test_split():
    tr, te = train_test_split(768, 3)
    assert len(te) == 77 and len(tr) == 691
    assert not set(tr) & set(te) and len(set(tr) | set(te)) == 768
    assert np.array_equal(train_test_split(768, 3)[1], te)
    assert not np.array_equal(train_test_split(768, 4)[1], te)
