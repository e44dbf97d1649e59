import struct

import numpy as np
import pytest

from adapool.datasets import (BadMagicError, CountMismatchError, DataFormatError, Dataset,
                              UnexpectedEndError, gen_orbit_dataset, load_csv, load_idx, save_idx,
                              shifted_digits)
from adapool.groups import make_cyclic_group, orbit_signature
from adapool.tensor import ShapeError


def write_idx(tmp_path, pixels, labels):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(struct.pack(">4I", 0x803, *pixels.shape) + pixels.astype(np.uint8).tobytes())
    lab.write_bytes(struct.pack(">2I", 0x801, len(labels)) + np.asarray(labels, np.uint8).tobytes())
    return img, lab


def test_load_idx_fixture(tmp_path):
    pixels = np.arange(18).reshape(2, 3, 3) * 15
    img, lab = write_idx(tmp_path, pixels, [3, 1])
    ds = load_idx(img, lab)
    assert ds.images.shape == (2, 3, 3)
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    np.testing.assert_array_equal(ds.images * 255, pixels)
    assert ds.labels.tolist() == [3, 1] and ds.split == "train"


def test_empty_file(tmp_path):
    img, lab = write_idx(tmp_path, np.zeros((1, 2, 2)), [0])
    img.write_bytes(b"")
    with pytest.raises(UnexpectedEndError, match="unexpected end of data"):
        load_idx(img, lab)


def test_truncated_payload(tmp_path):
    img, lab = write_idx(tmp_path, np.zeros((2, 3, 3)), [0, 1])
    img.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(UnexpectedEndError):
        load_idx(img, lab)


def test_bad_magic(tmp_path):
    img, lab = write_idx(tmp_path, np.zeros((1, 2, 2)), [0])
    with pytest.raises(BadMagicError):
        load_idx(lab, img)


def test_count_mismatch(tmp_path):
    img, lab = write_idx(tmp_path, np.zeros((2, 2, 2)), [0, 1, 1])
    with pytest.raises(CountMismatchError, match="count mismatch"):
        load_idx(img, lab)


def test_idx_round_trip(tmp_path):
    ds = Dataset(np.random.default_rng(0).integers(0, 256, (5, 4, 6)) / 255.0, [0, 1, 2, 3, 4], "test")
    save_idx(ds, tmp_path / "i", tmp_path / "l")
    back = load_idx(tmp_path / "i", tmp_path / "l", "test")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("label,p0,p1,p2,p3\n1,0,255,51,0\n0,255,255,0,0\n")
    ds = load_csv(path)
    assert ds.images.shape == (2, 2, 2)
    np.testing.assert_allclose(ds.images[0], [[0, 1], [0.2, 0]])
    assert ds.labels.tolist() == [1, 0]
    path.write_text("1,0,300,0,0\n")
    with pytest.raises(DataFormatError):
        load_csv(path)


def test_orbit_identity_subset():
    G = make_cyclic_group(6)
    ident = G.subset([G.identity])
    ds = gen_orbit_dataset(np.linspace(0, 1, 6)[None], ident, 5)
    assert np.all(ds.images == ds.images[0])


def test_orbit_dataset_deterministic_and_on_orbit():
    G = make_cyclic_group((4, 4))
    pats = np.random.default_rng(0).random((3, 4, 4))
    a = gen_orbit_dataset(pats, G, 10, seed=7)
    b = gen_orbit_dataset(pats, G, 10, seed=7)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    for img, c in zip(a.images, a.labels):
        assert any(np.array_equal(img.reshape(-1), o) for o in (G.apply(g, pats[c].reshape(-1))
                                                                 for g in range(G.order)))


def test_orbit_signatures_separate_orthogonal_patterns():
    G = make_cyclic_group(8)
    pats = np.zeros((2, 8))
    pats[0, :3] = 1.0
    pats[1, 4] = 1.0
    ds = gen_orbit_dataset(pats, G, 20, seed=1)
    t = np.linspace(0.1, 0.9, 8)
    # full-group-invariant feature: the sorted orbit signature; classes are linearly
    # separable on its sum (the group integral)
    feats = np.array([sum(orbit_signature(x.reshape(-1), t, G).values) for x in ds.images])
    lo, hi = feats[ds.labels == 1].max(), feats[ds.labels == 0].min()
    assert lo < hi


def test_orbit_degree_mismatch():
    with pytest.raises(ShapeError):
        gen_orbit_dataset(np.zeros((1, 5)), make_cyclic_group(4), 2)


def test_shifted_digits():
    tr, te = shifted_digits(300, 100, seed=0)
    assert tr.images.shape == (300, 28, 28) and te.images.shape == (100, 28, 28)
    assert set(np.unique(tr.labels)) == set(range(10))
    assert tr.images.min() >= 0 and tr.images.max() <= 1
    again, _ = shifted_digits(300, 100, seed=0)
    np.testing.assert_array_equal(tr.images, again.images)


def test_shifted_digits_max_shift():
    tr, _ = shifted_digits(200, 10, seed=0, max_shift=0)
    # every digit sits at the centered offset (4, 4): the border stays empty
    assert np.all(tr.images[:, :4] == 0) and np.all(tr.images[:, 24:] == 0)
    assert np.all(tr.images[:, :, :4] == 0) and np.all(tr.images[:, :, 24:] == 0)
    full, _ = shifted_digits(200, 10, seed=0)
    assert full.images[:, :4].any()
