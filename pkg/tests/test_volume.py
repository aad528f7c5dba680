import numpy as np
import pytest

from ifield.volume import (
    PreprocessSpec, Role, Volume, VolumeError, VolumeFormatError,
    clip_normalize, downsample, nearest_rank_percentile, read_volume, write_volume,
)


@pytest.mark.parametrize("role,data", [
    (Role.INTENSITY, np.linspace(0, 1, 24, dtype=np.float32)),
    (Role.SCORE, np.arange(24, dtype=np.float32) * 0.5),
    (Role.LABEL, np.arange(24) % 7),
    (Role.MASK, np.arange(24) % 2),
])
def test_roundtrip_bit_exact(tmp_path, role, data):
    vol = Volume((2, 3, 4), role, data)
    path = tmp_path / "vol.vol"
    write_volume(vol, path)
    back = read_volume(path)
    assert back.dims == vol.dims
    assert back.role == role
    assert back.data.tobytes() == vol.data.astype(back.data.dtype).tobytes()


def test_roundtrip_zeros(tmp_path):
    vol = Volume((2, 2, 2), Role.INTENSITY, np.zeros(8))
    write_volume(vol, tmp_path / "z.vol")
    back = read_volume(tmp_path / "z.vol")
    assert np.array_equal(back.data, np.zeros(8, dtype=np.float32))


def test_layout_x_fastest(tmp_path):
    vol = Volume((2, 2, 2), Role.INTENSITY, np.zeros(8))
    data = vol.data.copy()
    data[vol.index(1, 0, 0)] = 5.0
    vol = Volume((2, 2, 2), Role.INTENSITY, data)
    assert vol.index(1, 0, 0) == 1
    assert vol.grid()[1, 0, 0] == 5.0
    write_volume(vol, tmp_path / "v.vol")
    assert read_volume(tmp_path / "v.vol").data[1] == 5.0


def test_bad_magic(tmp_path):
    (tmp_path / "bad.vol").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(VolumeFormatError):
        read_volume(tmp_path / "bad.vol")


def test_payload_length_mismatch(tmp_path):
    import struct
    raw = b"VOL1" + struct.pack("<B3I", 1, 2, 2, 2) + bytes(7)  # 7 labels, need 8
    (tmp_path / "short.vol").write_bytes(raw)
    with pytest.raises(VolumeFormatError):
        read_volume(tmp_path / "short.vol")


def test_data_length_validation():
    with pytest.raises(VolumeError):
        Volume((2, 2, 2), Role.INTENSITY, np.zeros(7))


def test_mask_values_validated():
    with pytest.raises(VolumeError):
        Volume((1, 1, 2), Role.MASK, np.array([0, 2]))


def test_nearest_rank_percentile_oracle():
    values = np.arange(100.0)
    rng = np.random.default_rng(3)
    rng.shuffle(values)
    assert nearest_rank_percentile(values, 98.0) == 98.0
    assert nearest_rank_percentile(values, 100.0) == 99.0


def test_clip_normalize_hundred_values():
    vol = Volume((10, 10, 1), Role.INTENSITY, np.arange(100.0))
    out = clip_normalize(vol, PreprocessSpec(clip_percentile=98.0))
    assert out.data.max() == 1.0
    assert out.data[98] == 1.0
    assert out.data[49] == pytest.approx(49.0 / 98.0, abs=1e-7)
    assert out.data[99] == 1.0  # clipped


def test_clip_normalize_constant():
    vol = Volume((2, 2, 2), Role.INTENSITY, np.full(8, 5.0))
    out = clip_normalize(vol)
    assert np.all(out.data == 1.0)


def test_clip_normalize_all_zero():
    vol = Volume((2, 2, 2), Role.INTENSITY, np.zeros(8))
    out = clip_normalize(vol)
    assert np.all(out.data == 0.0)


def test_clip_normalize_idempotent():
    rng = np.random.default_rng(7)
    vol = Volume((5, 4, 3), Role.INTENSITY, rng.uniform(0, 10, 60))
    once = clip_normalize(vol)
    twice = clip_normalize(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-12)
    assert once.data.min() >= 0.0 and once.data.max() <= 1.0


def test_downsample_constant():
    vol = Volume((4, 4, 4), Role.INTENSITY, np.full(64, 3.25))
    out = downsample(vol, (2, 2, 2))
    assert out.dims == (2, 2, 2)
    assert np.all(out.data == 3.25)


def test_downsample_block_mean():
    vol = Volume((2, 1, 1), Role.INTENSITY, np.array([0.0, 1.0]))
    out = downsample(vol, (1, 1, 1))
    assert out.data[0] == 0.5


def test_downsample_identity():
    rng = np.random.default_rng(11)
    vol = Volume((3, 3, 3), Role.INTENSITY, rng.uniform(size=27))
    out = downsample(vol, (3, 3, 3))
    np.testing.assert_array_equal(out.data, vol.data)


def test_downsample_zero_target_errors():
    vol = Volume((2, 2, 2), Role.INTENSITY, np.zeros(8))
    with pytest.raises(VolumeError):
        downsample(vol, (0, 1, 1))


def test_downsample_target_exceeds_source():
    vol = Volume((2, 2, 2), Role.INTENSITY, np.zeros(8))
    with pytest.raises(VolumeError):
        downsample(vol, (4, 2, 2))


def test_double_downsample_constant_power_of_two():
    vol = Volume((8, 8, 8), Role.INTENSITY, np.full(512, 1.5))
    via = downsample(downsample(vol, (4, 4, 4)), (2, 2, 2))
    direct = downsample(vol, (2, 2, 2))
    np.testing.assert_array_equal(via.data, direct.data)


def test_downsample_non_integer_ratio_constant():
    vol = Volume((5, 5, 5), Role.INTENSITY, np.full(125, 0.7))
    out = downsample(vol, (3, 3, 3))
    np.testing.assert_allclose(out.data, 0.7, atol=1e-12)
