import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from neuracodec import (
    DatasetError,
    DatasetManifest,
    TensorFileError,
    encrypt_dataset,
    export_png,
    load_encrypted_dataset,
    load_image,
    load_tensor,
    save_tensor,
)
from neuracodec.dataset_io import peek_geometry, read_labels

from conftest import random_plain_images


def write_png(path, array_hwc):
    Image.fromarray(array_hwc).save(path)


def make_plain_dir(tmp_path, n=4, height=32, width=32, seed=0, name="plain"):
    src = tmp_path / name
    src.mkdir()
    rng = np.random.default_rng(seed)
    for i in range(n):
        arr = (rng.random((height, width, 3)) * 255).astype(np.uint8)
        write_png(src / f"img{i}.png", arr)
    return src


class TestTensorFile:
    def test_round_trip(self, tmp_path):
        x = np.random.default_rng(0).random((196, 768)).astype(np.float32)
        path = tmp_path / "t.nct"
        save_tensor(x, path)
        assert np.array_equal(load_tensor(path), x)

    @settings(max_examples=15, deadline=None)
    @given(shape=st.lists(st.integers(1, 7), min_size=1, max_size=4))
    def test_round_trip_shapes(self, shape):
        import tempfile, os
        x = np.random.default_rng(sum(shape)).random(shape).astype(np.float32)
        fd, path = tempfile.mkstemp(suffix=".nct")
        os.close(fd)
        try:
            save_tensor(x, path)
            back = load_tensor(path)
            assert back.shape == tuple(shape)
            assert np.array_equal(back, x)
        finally:
            os.unlink(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.nct"
        path.write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(TensorFileError, match="byte 0"):
            load_tensor(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.nct"
        save_tensor(np.ones((4, 4), np.float32), path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(TensorFileError, match="payload"):
            load_tensor(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "t.nct"
        path.write_bytes(b"NCT1")
        with pytest.raises(TensorFileError, match="byte 4"):
            load_tensor(path)

    def test_rank_zero_rejected(self, tmp_path):
        path = tmp_path / "t.nct"
        with pytest.raises(TensorFileError, match="rank"):
            save_tensor(np.float32(3.0), path)
        path.write_bytes(b"NCT1" + b"\x00")
        with pytest.raises(TensorFileError, match="rank"):
            load_tensor(path)

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(TensorFileError, match="non-finite"):
            save_tensor(np.array([np.nan], np.float32), tmp_path / "t.nct")


class TestLoadImage:
    def test_pixel_values(self, tmp_path):
        write_png(tmp_path / "p.png", np.array([[[255, 0, 128]]], np.uint8))
        img = load_image(tmp_path / "p.png")
        assert img.shape == (3, 1, 1)
        assert np.allclose(img.ravel(), [1.0, 0.0, 128 / 255])

    def test_all_black(self, tmp_path):
        write_png(tmp_path / "b.png", np.zeros((8, 8, 3), np.uint8))
        assert not load_image(tmp_path / "b.png").any()

    def test_grayscale_single_channel(self, tmp_path):
        write_png(tmp_path / "g.png", np.full((4, 4), 51, np.uint8))
        img = load_image(tmp_path / "g.png")
        assert img.shape == (1, 4, 4)
        assert np.allclose(img, 0.2)

    def test_16bit_png_rejected(self, tmp_path):
        Image.fromarray(np.zeros((4, 4), np.uint16)).save(tmp_path / "d.png")
        with pytest.raises(DatasetError, match="PNG"):
            load_image(tmp_path / "d.png")

    def test_ppm_p6(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 255, 0]))
        img = load_image(path)
        assert img.shape == (3, 1, 2)
        assert img[0, 0, 0] == 1.0 and img[1, 0, 1] == 1.0

    def test_16bit_ppm_rejected(self, tmp_path):
        path = tmp_path / "d.ppm"
        path.write_bytes(b"P6\n2 1\n65535\n" + bytes(12))
        with pytest.raises(DatasetError, match="PPM"):
            load_image(path)

    def test_unsupported_format_named(self, tmp_path):
        arr = (np.random.default_rng(0).random((8, 8, 3)) * 255).astype(np.uint8)
        Image.fromarray(arr).save(tmp_path / "j.jpg", "JPEG")
        with pytest.raises(DatasetError, match="JPEG"):
            load_image(tmp_path / "j.jpg")

    def test_garbage_file(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"not an image")
        with pytest.raises(DatasetError):
            load_image(tmp_path / "x.png")


class TestExportPng:
    def test_endpoints(self, tmp_path):
        img = np.array([[[-2.0, 3.0]]], np.float32)
        path = tmp_path / "v.png"
        export_png(img, -2.0, 3.0, path)
        out = np.asarray(Image.open(path))
        assert out[0, 0] == 0 and out[0, 1] == 255

    def test_midpoint_rounds_half_up(self, tmp_path):
        img = np.array([[[0.5]]], np.float32)
        path = tmp_path / "v.png"
        export_png(img, 0.0, 1.0, path)
        assert np.asarray(Image.open(path))[0, 0] == 128

    def test_constant_gray(self, tmp_path):
        img = np.full((3, 4, 4), 0.25, np.float32)
        path = tmp_path / "v.png"
        export_png(img, 0.0, 1.0, path)
        out = np.asarray(Image.open(path))
        assert (out == 64).all()  # 0.25*255 + 0.5 -> 64

    def test_out_of_range_clamped(self, tmp_path):
        img = np.array([[[-10.0, 10.0]]], np.float32)
        path = tmp_path / "v.png"
        export_png(img, 0.0, 1.0, path)
        out = np.asarray(Image.open(path))
        assert out[0, 0] == 0 and out[0, 1] == 255

    def test_bad_range(self, tmp_path):
        with pytest.raises(ValueError):
            export_png(np.zeros((1, 2, 2)), 1.0, 1.0, tmp_path / "v.png")


class TestEncryptDataset:
    def test_outputs_and_manifest(self, tmp_path, fixed_key, toy_image_config):
        src = make_plain_dir(tmp_path)
        dst = tmp_path / "enc"
        manifest = encrypt_dataset(src, fixed_key, toy_image_config, dst)
        assert sorted(p.name for p in dst.glob("*.nct")) == [
            f"img{i}.nct" for i in range(4)
        ]
        assert [s.image_index for s in manifest.samples] == [0, 1, 2, 3]
        assert manifest.key_fingerprint == fixed_key.fingerprint()
        assert manifest.value_min <= manifest.value_max
        assert (dst / "manifest.json").exists()
        raw = json.loads((dst / "manifest.json").read_text())
        assert fixed_key.hex() not in json.dumps(raw)

    def test_rerun_is_byte_identical(self, tmp_path, fixed_key, toy_image_config):
        src = make_plain_dir(tmp_path)
        d1, d2 = tmp_path / "e1", tmp_path / "e2"
        encrypt_dataset(src, fixed_key, toy_image_config, d1)
        encrypt_dataset(src, fixed_key, toy_image_config, d2)
        for name in ("img0.nct", "img3.nct"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_jobs_do_not_change_bytes(self, tmp_path, fixed_key, toy_token_config):
        src = make_plain_dir(tmp_path)
        d1, d4 = tmp_path / "e1", tmp_path / "e4"
        encrypt_dataset(src, fixed_key, toy_token_config, d1, jobs=1)
        encrypt_dataset(src, fixed_key, toy_token_config, d4, jobs=4)
        for i in range(4):
            assert (d1 / f"img{i}.nct").read_bytes() == (d4 / f"img{i}.nct").read_bytes()

    def test_key_change_changes_fingerprint(self, tmp_path, fixed_key, other_key,
                                            toy_image_config):
        src = make_plain_dir(tmp_path)
        m1 = encrypt_dataset(src, fixed_key, toy_image_config, tmp_path / "e1")
        m2 = encrypt_dataset(src, other_key, toy_image_config, tmp_path / "e2")
        assert m1.key_fingerprint != m2.key_fingerprint

    def test_empty_dir_rejected(self, tmp_path, fixed_key, toy_image_config):
        src = tmp_path / "empty"
        src.mkdir()
        with pytest.raises(DatasetError, match="no PNG/PPM"):
            encrypt_dataset(src, fixed_key, toy_image_config, tmp_path / "e")

    def test_mixed_geometry_lists_offenders(self, tmp_path, fixed_key,
                                            toy_image_config):
        src = make_plain_dir(tmp_path)
        write_png(src / "odd.png",
                  np.zeros((16, 16, 3), np.uint8))
        with pytest.raises(DatasetError, match="odd.png"):
            encrypt_dataset(src, fixed_key, toy_image_config, tmp_path / "e")

    def test_labels_csv_attached(self, tmp_path, fixed_key, toy_image_config):
        src = make_plain_dir(tmp_path)
        (src / "labels.csv").write_text(
            "name,label\nimg0.png,cat\nimg2.png,dog\n"
        )
        manifest = encrypt_dataset(src, fixed_key, toy_image_config, tmp_path / "e")
        by_source = {s.source: s.label for s in manifest.samples}
        assert by_source["img0.png"] == "cat"
        assert by_source["img1.png"] is None

    def test_keep_perms_recorded(self, tmp_path, fixed_key, toy_token_config):
        src = make_plain_dir(tmp_path, n=2)
        manifest = encrypt_dataset(src, fixed_key, toy_token_config,
                                   tmp_path / "e", keep_perms=True)
        for s in manifest.samples:
            assert sorted(s.permutation) == list(range(16))

    def test_png_export_writes_files(self, tmp_path, fixed_key, toy_image_config):
        src = make_plain_dir(tmp_path, n=2)
        dst = tmp_path / "e"
        encrypt_dataset(src, fixed_key, toy_image_config, dst, export_pngs=True)
        assert sorted(p.name for p in dst.glob("*.png")) == ["img0.png", "img1.png"]
        # visualization is a separate artifact; tensors must be untouched
        d2 = tmp_path / "e2"
        encrypt_dataset(src, fixed_key, toy_image_config, d2)
        assert (dst / "img0.nct").read_bytes() == (d2 / "img0.nct").read_bytes()

    def test_png_export_needs_image_scheme(self, tmp_path, fixed_key,
                                           toy_token_config):
        src = make_plain_dir(tmp_path, n=2)
        with pytest.raises(DatasetError, match="PNG export"):
            encrypt_dataset(src, fixed_key, toy_token_config, tmp_path / "e",
                            export_pngs=True)

    def test_load_encrypted_dataset(self, tmp_path, fixed_key, toy_image_config):
        src = make_plain_dir(tmp_path, n=3)
        dst = tmp_path / "e"
        encrypt_dataset(src, fixed_key, toy_image_config, dst)
        manifest, tensors = load_encrypted_dataset(dst)
        assert len(tensors) == 3
        assert all(t.shape == (3, 32, 32) for t in tensors)
        assert manifest.config == toy_image_config

    def test_peek_geometry(self, tmp_path):
        src = make_plain_dir(tmp_path, n=1, height=16, width=24)
        assert peek_geometry(src) == (3, 16, 24)


class TestManifest:
    def test_round_trip(self, tmp_path, fixed_key, toy_image_config):
        src = make_plain_dir(tmp_path, n=2)
        manifest = encrypt_dataset(src, fixed_key, toy_image_config, tmp_path / "e")
        back = DatasetManifest.load(tmp_path / "e" / "manifest.json")
        assert back.to_dict() == manifest.to_dict()

    def test_non_contiguous_indices_rejected(self, toy_image_config):
        from neuracodec.dataset_io import SampleEntry
        with pytest.raises(DatasetError, match="contiguous"):
            DatasetManifest(
                scheme="color",
                config=toy_image_config,
                key_fingerprint="ab" * 32,
                value_min=0.0,
                value_max=1.0,
                samples=[SampleEntry("a.png", "a.nct", 0),
                         SampleEntry("b.png", "b.nct", 2)],
            )

    def test_inverted_range_rejected(self, toy_image_config):
        with pytest.raises(DatasetError, match="inverted"):
            DatasetManifest(
                scheme="color",
                config=toy_image_config,
                key_fingerprint="ab" * 32,
                value_min=1.0,
                value_max=0.0,
            )

    def test_matches_key(self, tmp_path, fixed_key, other_key, toy_image_config):
        src = make_plain_dir(tmp_path, n=1)
        manifest = encrypt_dataset(src, fixed_key, toy_image_config, tmp_path / "e")
        assert manifest.matches_key(fixed_key)
        assert not manifest.matches_key(other_key)

    def test_bad_labels_header(self, tmp_path):
        src = tmp_path / "s"
        src.mkdir()
        (src / "labels.csv").write_text("file,tag\nx,y\n")
        with pytest.raises(DatasetError, match="name,label"):
            read_labels(src)
