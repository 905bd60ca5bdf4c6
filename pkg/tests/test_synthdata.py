import json

import numpy as np
import pytest

from mcd_anomaly.errors import GenerationError, UsageError
from mcd_anomaly.imageio import from_uint16, load_gray16, save_gray16, to_uint16
from mcd_anomaly.rng import RandomStream
from mcd_anomaly.synthdata import (
    AnomalyParams,
    TextureParams,
    build_corpus,
    gen_normal,
    inject_anomaly,
    load_manifest,
)


class TestGenNormal:
    def test_same_stream_is_bit_identical(self):
        params = TextureParams(size=64)
        a = gen_normal(params, RandomStream(3))
        b = gen_normal(params, RandomStream(3))
        assert np.array_equal(a, b)

    def test_rescaled_into_unit_range_with_spread(self):
        params = TextureParams(size=64)
        for i in range(10):
            img = gen_normal(params, RandomStream(1).child(i))
            assert img.min() >= -1.0 and img.max() <= 1.0
            assert img.max() - img.min() > 0.5

    def test_spectrum_peaks_inside_configured_band(self):
        params = TextureParams(size=128, components=3, freq_range=(5.0, 11.0))
        hits = 0
        n = 100
        for i in range(n):
            img = gen_normal(params, RandomStream(2).child(i))
            spectrum = np.abs(np.fft.fft2(img - img.mean()))
            fy = np.fft.fftfreq(128) * 128
            radial = np.hypot(fy[:, None], fy[None, :])
            peak_r = radial.ravel()[int(np.argmax(spectrum.ravel()))]
            if 5.0 - 1.5 <= peak_r <= 11.0 + 1.5:
                hits += 1
        assert hits == n


class TestInjectAnomaly:
    def test_identity_anomaly_leaves_image_unchanged(self):
        params = AnomalyParams(radius_range=(8, 12), contrast_range=(0.0, 0.0),
                               freq_mult_range=(1.0, 1.0), count_range=(1, 1))
        image = gen_normal(TextureParams(size=64), RandomStream(4))
        out, ann = inject_anomaly(image, params, RandomStream(5), image_id="t")
        assert np.array_equal(out, image)
        assert len(ann.boxes) == 1

    def test_pixels_outside_boxes_untouched(self):
        params = AnomalyParams(radius_range=(6, 10), count_range=(1, 2))
        image = gen_normal(TextureParams(size=64), RandomStream(6))
        out, ann = inject_anomaly(image, params, RandomStream(7), image_id="t")
        protected = np.ones_like(image, dtype=bool)
        for xmin, ymin, xmax, ymax in ann.boxes:
            protected[ymin : ymax + 1, xmin : xmax + 1] = False
        assert np.array_equal(out[protected], image[protected])

    def test_boxes_are_tight_around_modified_pixels(self):
        params = AnomalyParams(radius_range=(8, 12), contrast_range=(0.5, 0.5),
                               freq_mult_range=(2.0, 2.0), count_range=(1, 1))
        image = gen_normal(TextureParams(size=64), RandomStream(8))
        out, ann = inject_anomaly(image, params, RandomStream(9), image_id="t")
        changed = out != image
        ys, xs = np.nonzero(changed)
        xmin, ymin, xmax, ymax = ann.boxes[0]
        # change can be a subset (clipping may reproduce original values) but
        # must stay inside the reported box
        assert xs.min() >= xmin and xs.max() <= xmax
        assert ys.min() >= ymin and ys.max() <= ymax

    def test_box_area_fractions_span_target_range(self):
        params = AnomalyParams(count_range=(1, 1))
        size = 256
        fractions = []
        image = gen_normal(TextureParams(size=size), RandomStream(10))
        for i in range(200):
            _, ann = inject_anomaly(image, params, RandomStream(11).child(i), image_id="t")
            xmin, ymin, xmax, ymax = ann.boxes[0]
            fractions.append((xmax - xmin + 1) * (ymax - ymin + 1) / size**2)
        assert min(fractions) <= 0.005
        assert max(fractions) >= 0.05

    def test_infeasible_placement_raises(self):
        params = AnomalyParams(radius_range=(100, 120), count_range=(1, 1))
        image = np.zeros((64, 64))
        with pytest.raises(GenerationError):
            inject_anomaly(image, params, RandomStream(12))


class TestPngRoundTrip:
    def test_quantization_error_within_half_step(self, tmp_path):
        image = gen_normal(TextureParams(size=48), RandomStream(13))
        path = tmp_path / "img.png"
        save_gray16(image, path)
        back = load_gray16(path)
        assert np.abs(back - image).max() <= 1.0 / 65535

    def test_uint16_mapping_is_inverse(self):
        values = np.linspace(-1, 1, 1001)
        assert np.abs(from_uint16(to_uint16(values)) - values).max() <= 1.0 / 65535


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest = build_corpus(out, n_train=4, n_test=3,
                            texture=TextureParams(size=64), master_seed=99)
    return out, manifest


class TestBuildCorpus:

    def test_roles_and_counts(self, corpus):
        out, manifest = corpus
        assert len(manifest.by_role("train")) == 4
        assert len(manifest.by_role("test")) == 3
        for entry in manifest.entries:
            assert (out / entry.path).exists()

    def test_training_images_are_anomaly_free(self, corpus):
        # training files regenerate exactly from their manifest seed with no
        # anomaly step, so role separation is structural
        out, manifest = corpus
        for entry in manifest.by_role("train"):
            regen = gen_normal(TextureParams(size=64), RandomStream(entry.seed))
            stored = load_gray16(out / entry.path)
            assert np.abs(stored - regen).max() <= 1.0 / 65535

    def test_every_test_image_has_a_box(self, corpus):
        out, manifest = corpus
        from mcd_anomaly.evaluation import read_boxes_csv
        annotations = read_boxes_csv(out / "boxes.csv")
        test_ids = {e.path.split("/")[-1].removesuffix(".png") for e in manifest.by_role("test")}
        assert set(annotations) == test_ids
        assert all(len(a.boxes) >= 1 for a in annotations.values())

    def test_regeneration_is_byte_identical(self, tmp_path):
        texture = TextureParams(size=48)
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        build_corpus(a_dir, 2, 2, texture=texture, master_seed=5)
        build_corpus(b_dir, 2, 2, texture=texture, master_seed=5)
        for rel in sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file()):
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes(), rel

    def test_manifest_round_trip(self, corpus):
        out, manifest = corpus
        loaded = load_manifest(out / "manifest.json")
        assert loaded == manifest
        payload = json.loads((out / "manifest.json").read_text())
        assert set(payload) == {"version", "master_seed", "params", "entries"}
        assert set(payload["entries"][0]) == {"path", "role", "seed"}

    def test_empty_split_rejected(self, tmp_path):
        with pytest.raises(UsageError):
            build_corpus(tmp_path / "x", 0, 1)
