import numpy as np
import pytest

from lossycoll.data import (
    FieldKind,
    SyntheticSpec,
    generate_field,
    load_raw_f32,
    read_pgm,
    save_raw_f32,
    synthetic_image,
    to_gray8,
    write_pgm,
)
from lossycoll.errors import IngestionError, ParameterError


@pytest.mark.parametrize("kind", list(FieldKind))
def test_generation_is_deterministic(kind):
    a = generate_field(SyntheticSpec(kind, 5000, seed=3))
    b = generate_field(SyntheticSpec(kind.value, 5000, seed=3))
    assert a.dtype == np.float32 and a.shape == (5000,)
    np.testing.assert_array_equal(a, b)
    assert np.isfinite(a).all()


def test_field_kinds_differ_by_seed_and_shape():
    a = generate_field(SyntheticSpec("uniform", 1000, seed=1))
    b = generate_field(SyntheticSpec("uniform", 1000, seed=2))
    assert not np.array_equal(a, b)
    assert np.abs(a).max() <= 1.0
    c = generate_field(SyntheticSpec("constant", 10, amplitude=2.5, offset=1.0))
    assert (c == 3.5).all()


def test_spec_validation():
    with pytest.raises(ParameterError):
        SyntheticSpec("uniform", 0)
    with pytest.raises(ValueError):
        SyntheticSpec("plasma", 10)
    with pytest.raises(ParameterError):
        SyntheticSpec("sine_mix", 10, waves=0)


def test_raw_round_trip_and_prefix(tmp_path):
    x = generate_field(SyntheticSpec("gaussian_walk", 777, seed=5))
    path = tmp_path / "f.f32"
    save_raw_f32(path, x)
    assert path.stat().st_size == 777 * 4
    np.testing.assert_array_equal(load_raw_f32(path), x)
    np.testing.assert_array_equal(load_raw_f32(path, count=10), x[:10])
    with pytest.raises(IngestionError):
        load_raw_f32(path, count=778)
    with pytest.raises(ParameterError):
        load_raw_f32(path, count=0)


def test_raw_rejects_partial_values(tmp_path):
    path = tmp_path / "bad.f32"
    path.write_bytes(bytes(10))
    with pytest.raises(IngestionError, match="whole number"):
        load_raw_f32(path)
    path.write_bytes(b"")
    with pytest.raises(IngestionError, match="empty"):
        load_raw_f32(path)


def test_raw_reports_first_non_finite_index(tmp_path):
    x = np.arange(10, dtype=np.float32)
    x[6], x[8] = np.nan, np.inf
    path = tmp_path / "nan.f32"
    save_raw_f32(path, x)
    with pytest.raises(IngestionError) as err:
        load_raw_f32(path)
    assert err.value.index == 6
    np.testing.assert_array_equal(load_raw_f32(path, count=6), x[:6])


def test_raw_is_little_endian(tmp_path):
    path = tmp_path / "le.f32"
    path.write_bytes(np.array([1.5], dtype=">f4").tobytes()[::-1])
    assert load_raw_f32(path)[0] == 1.5


def test_gray8_normalization():
    g = to_gray8(np.array([[0.0, 0.5], [1.0, 0.25]]))
    assert g.tolist() == [[0, 128], [255, 64]]
    assert not to_gray8(np.ones((3, 3))).any()


def test_pgm_round_trip(tmp_path):
    img = synthetic_image(37, 53, seed=1)
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n53 37\n255\n")
    assert len(raw) == len(b"P5\n53 37\n255\n") + 37 * 53
    np.testing.assert_array_equal(read_pgm(path), to_gray8(img))


def test_pgm_reader_rejects_bad_files(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(IngestionError):
        read_pgm(path)
    path.write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(IngestionError):
        read_pgm(path)
    path.write_bytes(b"P5\n# comment\n2 1\n255\n\x01\x02")
    assert read_pgm(path).tolist() == [[1, 2]]
    with pytest.raises(ParameterError):
        write_pgm(path, np.zeros(4))


def test_synthetic_image_deterministic():
    np.testing.assert_array_equal(synthetic_image(16, 16, 2), synthetic_image(16, 16, 2))
    assert not np.array_equal(synthetic_image(16, 16, 2), synthetic_image(16, 16, 3))
