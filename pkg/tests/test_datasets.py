import io
import struct
import zipfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcae.datasets import (CATEGORICAL, NPY_MAGIC, WAVEFORM_PERIODS, NpyFormatError, SchemaError,
                           export_waveforms_csv, generate_waveforms, load_dsprites, normalize,
                           normalized, pulse_train, read_npy_header, write_dsprites_like)
from gcae.metrics import histogram_mi


@pytest.fixture(scope="module")
def waves():
    return generate_waveforms()


# -- waveforms -------------------------------------------------------------------

def test_waveform_grid_shape(waves):
    assert waves.inputs.shape == (360, 1000)
    assert len(np.unique(waves.factors[:, 0])) == 30
    assert len(np.unique(waves.factors[:, 1])) == 12
    assert waves.kinds[1] == CATEGORICAL


def test_duties_strictly_inside(waves):
    d = waves.factors[:, 0]
    assert d.min() > 0.05 and d.max() < 0.95


def test_half_duty_mean():
    assert pulse_train(0.5, 100).mean() == pytest.approx(0.5)


def test_full_duty_all_ones():
    assert np.all(pulse_train(1.0, 70) == 1.0)


@pytest.mark.parametrize("period", WAVEFORM_PERIODS)
def test_pulse_period(period):
    x = pulse_train(0.3, period)
    np.testing.assert_array_equal(x[:period], x[period:2 * period])


def test_generator_deterministic(waves):
    again = generate_waveforms(np.random.default_rng(123))
    np.testing.assert_array_equal(again.inputs, waves.inputs)


def test_factor_independence(waves):
    assert histogram_mi(waves.factors[:, 0], waves.factors[:, 1], None, None) < 0.01


def test_waveform_csv(tmp_path, waves):
    path = tmp_path / "w.csv"
    export_waveforms_csv(waves, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 361
    assert len(lines[1].split(",")) == 1002


# -- intervention sampling -----------------------------------------------------------

def test_fixed_duty_batch(waves):
    rng = np.random.default_rng(0)
    idx = waves.sample_fixed_factor(0, 64, rng)
    assert len(np.unique(waves.factors[idx, 0])) == 1
    assert len(np.unique(waves.factors[idx, 1])) > 1


def test_fixed_batch_of_one(waves):
    idx = waves.sample_fixed_factor(1, 1, np.random.default_rng(0))
    assert idx.shape == (1,)


def test_fixed_factor_bad_index(waves):
    with pytest.raises(IndexError):
        waves.sample_fixed_factor(2, 8, np.random.default_rng(0))


def test_batches_cover_dataset(waves):
    gen = waves.batches(60, np.random.default_rng(0))
    seen = np.concatenate([next(gen) for _ in range(6)])
    assert sorted(seen) == list(range(360))


# -- normalization -----------------------------------------------------------------

def test_normalize_moments(waves):
    x, stats = normalize(waves.inputs)
    varying = stats.std > 1e-6
    assert np.all(np.abs(x.mean(axis=0)) < 1e-5)
    assert np.all(np.abs(x.std(axis=0)[varying] - 1) < 1e-3)


def test_normalize_constant_feature():
    data = np.column_stack([np.full(10, 4.0), np.arange(10.0)])
    x, stats = normalize(data)
    assert np.all(x[:, 0] == 0) and stats.std[0] == pytest.approx(1e-6)


def test_normalize_with_fixed_stats_is_repeatable(waves):
    _, stats = normalize(waves.inputs)
    a, _ = normalize(waves.inputs, stats)
    b, _ = normalize(waves.inputs, stats)
    np.testing.assert_array_equal(a, b)


def test_factors_untouched_by_normalization(waves):
    ds, _ = normalized(waves)
    np.testing.assert_array_equal(ds.factors, waves.factors)


# -- npy / dSprites archive ----------------------------------------------------------

def npy_bytes(arr):
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 7), min_size=1, max_size=3),
       st.sampled_from(["<f8", "<i8", "|u1", "<f4"]))
def test_npy_header_round_trip(shape, descr):
    raw = npy_bytes(np.zeros(shape, dtype=descr))
    h = read_npy_header(io.BytesIO(raw))
    assert h.shape == tuple(shape) and np.dtype(h.descr) == np.dtype(descr)
    assert h.raw == raw[:h.data_offset]
    assert h.serialize() == h.raw


def test_npy_bad_magic():
    raw = bytearray(npy_bytes(np.zeros(3)))
    raw[1:6] = b"NUMPX"
    with pytest.raises(NpyFormatError) as info:
        read_npy_header(io.BytesIO(bytes(raw)))
    assert info.value.offset == 0


def test_npy_bad_version():
    raw = bytearray(npy_bytes(np.zeros(3)))
    raw[6] = 3
    with pytest.raises(NpyFormatError) as info:
        read_npy_header(io.BytesIO(bytes(raw)))
    assert info.value.offset == 6


def test_npy_manual_header():
    body = b"{'descr': '<i8', 'fortran_order': False, 'shape': (2, 3), }"
    body += b" " * ((-(10 + len(body) + 1)) % 64) + b"\n"
    raw = NPY_MAGIC + b"\x01\x00" + struct.pack("<H", len(body)) + body
    h = read_npy_header(io.BytesIO(raw + np.arange(6, dtype="<i8").tobytes()))
    assert h.shape == (2, 3) and h.data_offset % 64 == 0


def fake_dsprites(n=200, seed=0):
    rng = np.random.default_rng(seed)
    imgs = rng.integers(0, 2, (n, 64, 64), dtype=np.uint8)
    classes = np.column_stack([np.zeros(n, int), rng.integers(0, 3, n), rng.integers(0, 6, n),
                               rng.integers(0, 40, n), rng.integers(0, 32, n), rng.integers(0, 32, n)])
    values = np.column_stack([np.ones(n), classes[:, 1] + 1.0, 0.5 + 0.1 * classes[:, 2],
                              classes[:, 3] * 0.16, classes[:, 4] / 31, classes[:, 5] / 31])
    return imgs, values, classes


@pytest.mark.parametrize("compress", [True, False])
def test_dsprites_fixture_round_trip(tmp_path, compress):
    imgs, values, classes = fake_dsprites()
    path = tmp_path / "d.npz"
    write_dsprites_like(path, imgs, values, classes, compress=compress)
    ds = load_dsprites(path)
    np.testing.assert_array_equal(ds.images, imgs)
    np.testing.assert_array_equal(ds.factors, values[:, 1:])
    assert set(np.unique(ds.images)) <= {0, 1}
    with zipfile.ZipFile(path) as zf:
        raw = zf.read("imgs.npy")
    assert ds.headers["imgs"].raw == raw[:ds.headers["imgs"].data_offset]


def test_dsprites_subsample_deterministic(tmp_path):
    imgs, values, classes = fake_dsprites(500)
    path = tmp_path / "d.npz"
    write_dsprites_like(path, imgs, values, classes)
    a = load_dsprites(path, subsample=100, seed=3)
    b = load_dsprites(path, subsample=100, seed=3)
    np.testing.assert_array_equal(a.images, b.images)
    rows = [int(np.flatnonzero((imgs == im).all(axis=(1, 2)))[0]) for im in a.images[:20]]
    np.testing.assert_array_equal(a.factors[:20], values[rows, 1:])
    assert len(a) == 100


def test_dsprites_factor_dataset(tmp_path):
    imgs, values, classes = fake_dsprites()
    path = tmp_path / "d.npz"
    write_dsprites_like(path, imgs, values, classes)
    fd = load_dsprites(path).to_factor_dataset()
    assert fd.inputs.shape == (200, 4096) and fd.n_factors == 5
    np.testing.assert_array_equal(fd.factors[:, 0], classes[:, 1])
    rng = np.random.default_rng(0)
    fixed = [fd.factors[fd.sample_fixed_factor(k, 16, rng), k] for k in range(5)]
    assert all(len(np.unique(col)) == 1 for col in fixed)


def test_dsprites_schema_error(tmp_path):
    imgs, values, classes = fake_dsprites()
    path = tmp_path / "d.npz"
    write_dsprites_like(path, imgs, values[:, :5], classes)
    with pytest.raises(SchemaError):
        load_dsprites(path)


def test_dsprites_missing_member(tmp_path):
    path = tmp_path / "d.npz"
    np.savez(path, imgs=np.zeros((2, 64, 64), np.uint8))
    with pytest.raises(SchemaError):
        load_dsprites(path)
