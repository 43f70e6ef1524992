import numpy as np
import pytest

from segaw import storage
from segaw.errors import FormatError, InputError
from segaw.features import FeatureMatrix
from segaw.segments import BoundarySet


class TestFeatureFiles:
    def test_file_size_arithmetic(self, tmp_path):
        feat = FeatureMatrix("u", np.arange(6, dtype=np.float64).reshape(2, 3))
        path = tmp_path / "u.feat"
        storage.save_features(path, feat)
        assert path.stat().st_size == 4 + 4 + 4 + 4 + 2 * 3 * 4 == 40

    def test_roundtrip_to_f32_precision(self, tmp_path):
        rng = np.random.default_rng(1)
        feat = FeatureMatrix("u", rng.standard_normal((7, 5)))
        path = tmp_path / "u.feat"
        storage.save_features(path, feat)
        loaded = storage.load_features(path)
        assert loaded.utterance_id == "u"
        np.testing.assert_array_equal(
            loaded.frames, feat.frames.astype(np.float32).astype(np.float64))

    def test_truncated_payload_names_sizes(self, tmp_path):
        feat = FeatureMatrix("u", np.ones((4, 4)))
        data = storage.encode_features(feat)
        path = tmp_path / "t.feat"
        path.write_bytes(data[:-10])
        with pytest.raises(FormatError, match="expected .* bytes"):
            storage.load_features(path)

    def test_bad_magic_and_version(self, tmp_path):
        feat = FeatureMatrix("u", np.ones((1, 1)))
        data = storage.encode_features(feat)
        bad_magic = tmp_path / "m.feat"
        bad_magic.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(FormatError, match="magic"):
            storage.load_features(bad_magic)
        bad_version = tmp_path / "v.feat"
        bad_version.write_bytes(data[:4] + b"\x09\x00\x00\x00" + data[8:])
        with pytest.raises(FormatError, match="version"):
            storage.load_features(bad_version)

    def test_trailing_bytes_rejected(self, tmp_path):
        feat = FeatureMatrix("u", np.ones((1, 2)))
        path = tmp_path / "x.feat"
        path.write_bytes(storage.encode_features(feat) + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            storage.load_features(path)


class TestCheckpoints:
    def params(self):
        rng = np.random.default_rng(2)
        return {"enc.0.w": rng.standard_normal((4, 3)),
                "pi.b": rng.standard_normal(2)}

    def test_roundtrip_bit_identical(self, tmp_path):
        path = tmp_path / "m.ckpt"
        params = self.params()
        storage.save_checkpoint(path, "ssae", "a = 1\n", 99, params)
        first = path.read_bytes()
        kind, cfg, seed, loaded = storage.load_checkpoint(path)
        assert (kind, cfg, seed) == ("ssae", "a = 1\n", 99)
        storage.save_checkpoint(path, kind, cfg, seed, loaded)
        assert path.read_bytes() == first

    def test_load_promotes_to_float64(self, tmp_path):
        path = tmp_path / "m.ckpt"
        storage.save_checkpoint(path, "gas", "", 1, self.params())
        _, _, _, loaded = storage.load_checkpoint(path)
        for arr in loaded.values():
            assert arr.dtype == np.float64

    def test_fingerprint_changes_with_content(self, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        params = self.params()
        storage.save_checkpoint(p1, "ssae", "", 1, params)
        storage.save_checkpoint(p2, "ssae", "", 2, params)
        assert storage.checkpoint_fingerprint(p1) != storage.checkpoint_fingerprint(p2)
        assert len(storage.checkpoint_fingerprint(p1)) == 32


class TestIndex:
    def docs(self):
        rng = np.random.default_rng(3)
        return [("docA", BoundarySet.from_ends([4, 9], 9),
                 rng.standard_normal((2, 6))),
                ("docB", BoundarySet.from_ends([7], 7),
                 rng.standard_normal((1, 6)))]

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "i.sgix"
        fp = bytes(range(32))
        storage.save_index(path, fp, 6, self.docs())
        fp2, dim, docs = storage.load_index(path)
        assert fp2 == fp and dim == 6
        assert [d[0] for d in docs] == ["docA", "docB"]
        assert docs[0][1].segments == ((1, 4), (5, 9))
        ref = self.docs()[0][2].astype(np.float32).astype(np.float64)
        np.testing.assert_array_equal(docs[0][2], ref)

    def test_dim_inconsistency_rejected(self, tmp_path):
        docs = [("d", BoundarySet.from_ends([3], 3), np.ones((1, 4)))]
        with pytest.raises(InputError):
            storage.encode_index(bytes(32), 6, docs)


class TestManifests:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "m.tsv"
        entries = [("u1", BoundarySet.from_ends([3, 8], 8), [2, 5]),
                   ("u2", BoundarySet.from_ends([6], 6), None)]
        storage.save_manifest(path, entries)
        loaded = storage.load_manifest(path)
        assert loaded["u1"][0].segments == ((1, 3), (4, 8))
        assert loaded["u1"][1] == [2, 5]
        assert loaded["u2"][1] is None

    def test_bad_boundary_column(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u1\t3,x\t1\n")
        with pytest.raises(FormatError):
            storage.load_manifest(path)


def test_atomic_write_no_temp_left_behind(tmp_path):
    storage.atomic_write(tmp_path / "f.bin", b"hello")
    assert (tmp_path / "f.bin").read_bytes() == b"hello"
    assert [p.name for p in tmp_path.iterdir()] == ["f.bin"]
