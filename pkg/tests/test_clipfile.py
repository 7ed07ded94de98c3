import numpy as np
import pytest

from avsf.clipfile import ClipStore, read_clip, write_clip


def _sample(t=10, hw=12, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.random((t, hw, hw), dtype=np.float32)
    wave = (rng.random(640 * t, dtype=np.float32) * 2 - 1).astype(np.float32)
    return frames, wave


def test_round_trip_exact(tmp_path):
    frames, wave = _sample()
    path = tmp_path / "clip.avsf"
    write_clip(path, frames, wave)
    frames2, wave2, fps, sr = read_clip(path)
    assert fps == 25 and sr == 16000
    assert np.array_equal(frames, frames2)
    assert np.array_equal(wave, wave2)


def test_write_is_deterministic(tmp_path):
    frames, wave = _sample()
    write_clip(tmp_path / "a.avsf", frames, wave)
    write_clip(tmp_path / "b.avsf", frames, wave)
    assert (tmp_path / "a.avsf").read_bytes() == (tmp_path / "b.avsf").read_bytes()


def test_wave_length_validation(tmp_path):
    frames, wave = _sample()
    with pytest.raises(ValueError, match="samples"):
        write_clip(tmp_path / "bad.avsf", frames, wave[:-5])


def test_bad_magic_rejected(tmp_path):
    frames, wave = _sample()
    path = tmp_path / "clip.avsf"
    write_clip(path, frames, wave)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        read_clip(path)


def test_truncation_rejected(tmp_path):
    frames, wave = _sample()
    path = tmp_path / "clip.avsf"
    write_clip(path, frames, wave)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="bytes"):
        read_clip(path)


def test_store_caches_and_is_read_only(tmp_path):
    frames, wave = _sample()
    write_clip(tmp_path / "c.avsf", frames, wave)
    store = ClipStore(tmp_path)
    f1, w1 = store.get("c.avsf")
    f2, _ = store.get("c.avsf")
    assert f1 is f2 and len(store) == 1
    assert not f1.flags.writeable
    with pytest.raises(ValueError):
        f1[0, 0, 0] = 0.0
