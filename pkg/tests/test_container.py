import numpy as np
import pytest

from hsidehaze.container import (
    read_checkpoint,
    read_cube,
    write_checkpoint,
    write_cube,
)
from hsidehaze.cube import HsiCube
from hsidehaze.dataset import MANIFEST_COLUMNS, load_dataset, write_dataset
from hsidehaze.errors import FormatError
from hsidehaze.model import ModelConfig, init_params, params_from_entries, params_to_entries

from conftest import random_cube


def f32_cube(rng, bands=3, height=4, width=5):
    data = rng.uniform(0, 1, size=(bands, height, width)).astype(np.float32)
    return HsiCube(data=data)


class TestCubeFile:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        path = tmp_path / "cube.hsif"
        for _ in range(10):
            cube = f32_cube(
                rng,
                bands=int(rng.integers(1, 6)),
                height=int(rng.integers(1, 7)),
                width=int(rng.integers(1, 7)),
            )
            write_cube(path, cube)
            back, wl = read_cube(path)
            assert wl is None
            assert back.data.dtype == np.float32
            np.testing.assert_array_equal(back.data, cube.data)

    def test_wavelengths_round_trip(self, rng, tmp_path):
        path = tmp_path / "cube.hsif"
        cube = f32_cube(rng, bands=4)
        wl = np.array([450.0, 550.0, 700.0, 1200.0], dtype=np.float32)
        write_cube(path, cube, wavelengths=wl)
        back, wl_back = read_cube(path)
        np.testing.assert_array_equal(wl_back, wl)
        np.testing.assert_array_equal(back.data, cube.data)

    def test_trailing_bytes_rejected(self, rng, tmp_path):
        path = tmp_path / "cube.hsif"
        write_cube(path, f32_cube(rng))
        with open(path, "ab") as fh:
            fh.write(b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            read_cube(path)

    def test_truncation_rejected(self, rng, tmp_path):
        path = tmp_path / "cube.hsif"
        write_cube(path, f32_cube(rng))
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(FormatError, match="truncated"):
            read_cube(path)

    def test_bad_magic_rejected(self, rng, tmp_path):
        path = tmp_path / "cube.hsif"
        write_cube(path, f32_cube(rng))
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            read_cube(path)


class TestCheckpoint:
    def test_round_trip_exact(self, rng, tmp_path):
        path = tmp_path / "model.ckpt"
        entries = {
            "a.weight": rng.normal(size=(3, 4)).astype(np.float32),
            "a.bias": rng.normal(size=(3,)).astype(np.float32),
            "deep.0.tensor": rng.normal(size=(2, 3, 3, 3)).astype(np.float32),
        }
        write_checkpoint(path, entries)
        back = read_checkpoint(path)
        assert list(back) == list(entries)
        for name in entries:
            np.testing.assert_array_equal(back[name], entries[name])

    @pytest.mark.parametrize("overrides", [
        {},
        {"sse_mode": "none"},
        {"abs_enabled": False},
        {"sse_mode": "spectral", "concat_mode": "selected"},
        {"sse_mode": "spatial", "concat_mode": "none"},
    ])
    def test_model_params_survive(self, tmp_path, overrides):
        path = tmp_path / "model.ckpt"
        config = ModelConfig(bands=5, **overrides)
        params = init_params(config, seed=9)
        write_checkpoint(path, params_to_entries(params))
        restored = params_from_entries(read_checkpoint(path))
        assert restored.config.sse_mode == config.sse_mode
        assert restored.config.concat_mode == config.concat_mode
        assert restored.config.abs_enabled == config.abs_enabled
        original = params.named()
        for name, arr in restored.named().items():
            np.testing.assert_array_equal(arr, original[name])

    def test_every_corrupted_byte_detected(self, rng, tmp_path):
        path = tmp_path / "model.ckpt"
        write_checkpoint(path, {"w": rng.normal(size=(2, 2)).astype(np.float32)})
        blob = path.read_bytes()
        bad = tmp_path / "bad.ckpt"
        for offset in range(len(blob)):
            corrupted = bytearray(blob)
            corrupted[offset] ^= 0x01
            bad.write_bytes(bytes(corrupted))
            with pytest.raises(FormatError):
                read_checkpoint(bad)

    def test_truncation_rejected(self, rng, tmp_path):
        path = tmp_path / "model.ckpt"
        write_checkpoint(path, {"w": rng.normal(size=(4,)).astype(np.float32)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-6])
        with pytest.raises(FormatError):
            read_checkpoint(path)

    def test_duplicate_names_rejected(self, tmp_path):
        import struct
        import zlib

        # hand-build a checkpoint with the same entry twice
        body = b"T2CK1" + struct.pack("<I", 2)
        entry = struct.pack("<H", 1) + b"w" + bytes([1]) + struct.pack("<I", 1)
        entry += np.zeros(1, dtype="<f4").tobytes()
        body += entry + entry
        path = tmp_path / "dup.ckpt"
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
        with pytest.raises(FormatError, match="duplicate"):
            read_checkpoint(path)


class TestManifest:
    def _tiny_dataset(self, rng):
        from hsidehaze.dataset import generate_pairs
        from hsidehaze.hazesim import CirrusPatch
        from hsidehaze.simdata import fixture_wavelengths

        cleans = [random_cube(rng, bands=3, height=4, width=4) for _ in range(2)]
        patches = [
            CirrusPatch(values=rng.uniform(0, 0.8, size=(4, 4))) for _ in range(2)
        ]
        wl = fixture_wavelengths(3)
        # 2 patches x 2 alphas = 4 haze patterns, the fewest that satisfy
        # every positive fraction of the 0.5/0.25/0.25 split.
        return generate_pairs(
            cleans, patches, wl, [0.5, 0.9], seed=3, split_fractions=(0.5, 0.25, 0.25)
        )

    def test_write_load_round_trip(self, rng, tmp_path):
        dataset = self._tiny_dataset(rng)
        manifest = write_dataset(dataset, tmp_path / "ds")
        loaded = load_dataset(manifest)
        assert len(loaded.pairs) == len(dataset.pairs)
        for a, b in zip(loaded.pairs, dataset.pairs):
            assert a.pair_id == b.pair_id
            assert a.split == b.split
            assert a.alpha == b.alpha
            np.testing.assert_allclose(a.clean.data, b.clean.data, rtol=0, atol=1e-7)

    def test_manifest_bytes_deterministic(self, rng, tmp_path):
        dataset = self._tiny_dataset(rng)
        m1 = write_dataset(dataset, tmp_path / "d1")
        m2 = write_dataset(dataset, tmp_path / "d2")
        assert m1.read_bytes() == m2.read_bytes()

    def test_header_validated(self, rng, tmp_path):
        dataset = self._tiny_dataset(rng)
        manifest = write_dataset(dataset, tmp_path / "ds")
        text = manifest.read_text().splitlines()
        assert text[0] == ",".join(MANIFEST_COLUMNS)
        text[0] = "not,a,real,header,at,all"
        manifest.write_text("\n".join(text) + "\n")
        with pytest.raises(FormatError, match="header"):
            load_dataset(manifest)
