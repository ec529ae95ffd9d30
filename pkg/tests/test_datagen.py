"""Dataset factory: consensus grounding, triplet construction, pipeline runs."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insertkit.backends import mock_suite, shapes_scenario
from insertkit.backends.base import Eraser, GroundingDetector
from insertkit.core import BBox, BinaryMask, RasterImage, dilate_mask, iou
from insertkit.datagen import (
    DatasetManifest,
    PipelineConfig,
    build_triplets,
    consensus_detect,
    default_dilation_radius,
    expected_record_count,
    run_pipeline,
    validate_dataset,
)
from insertkit.datagen.consensus import REASON_DETECTION_FAILED, REASON_SCATTERED
from insertkit.errors import BackendUnavailable, InvalidArgument, SkipObject


class ScriptedDetector(GroundingDetector):
    """Returns a fixed sequence of boxes/None per locate call."""

    identifier = "scripted-detector"

    def __init__(self, draws):
        self.draws = list(draws)
        self.calls = 0

    def locate(self, image, phrase, temperature=None):
        self.calls += 1
        return self.draws.pop(0)


_IMG = RasterImage.zeros(8, 8)


class TestConsensusDetect:
    def test_identical_boxes_accepted(self):
        box = BBox(0.2, 0.2, 0.6, 0.6)
        det = ScriptedDetector([box, box, box])
        result = consensus_detect(_IMG, "thing", det)
        assert result.accepted
        assert result.box.as_tuple() == pytest.approx(box.as_tuple(), abs=1e-12)
        assert result.ious == (1.0, 1.0, 1.0)
        assert det.calls == 3

    def test_scattered_boxes_rejected(self):
        # Pairwise IoU of these two squares is 1/7, far below 0.8.
        a = BBox(0.0, 0.0, 0.2, 0.2)
        b = BBox(0.1, 0.1, 0.3, 0.3)
        det = ScriptedDetector([a, a, b])
        result = consensus_detect(_IMG, "thing", det)
        assert not result.accepted
        assert result.reason == REASON_SCATTERED
        assert result.box is None

    def test_not_found_draw_rejects(self):
        box = BBox(0.2, 0.2, 0.6, 0.6)
        det = ScriptedDetector([box, None, box])
        result = consensus_detect(_IMG, "thing", det)
        assert result.reason == REASON_DETECTION_FAILED
        assert result.draws[1] is None
        assert det.calls == 3  # every draw is taken for provenance

    def test_mean_box_of_disagreeing_but_close_draws(self):
        a = BBox(0.20, 0.20, 0.60, 0.60)
        b = BBox(0.22, 0.20, 0.62, 0.60)
        c = BBox(0.21, 0.20, 0.61, 0.60)
        det = ScriptedDetector([a, b, c])
        result = consensus_detect(_IMG, "thing", det, iou_threshold=0.5)
        assert result.accepted
        assert result.box.x0 == pytest.approx(0.21)
        assert result.box.x1 == pytest.approx(0.61)
        assert result.box.y0 == pytest.approx(0.20)

    def test_threshold_boundary_accepts(self):
        # Constructed so the pairwise IoU is exactly 0.8: two 1 x 9/16
        # boxes offset vertically by 1/16 give inter 0.5, union 0.625.
        a = BBox(0.0, 0.0, 1.0, 0.5625)
        b = BBox(0.0, 0.0625, 1.0, 0.625)
        assert iou(a, b) == 0.8
        det = ScriptedDetector([a, b, a])
        result = consensus_detect(_IMG, "thing", det, iou_threshold=0.8)
        assert result.accepted

    def test_just_below_threshold_rejects(self):
        a = BBox(0.0, 0.0, 1.0, 0.5625)
        b = BBox(0.0, 0.0625, 1.0, 0.625)
        det = ScriptedDetector([a, b, a])
        result = consensus_detect(_IMG, "thing", det, iou_threshold=0.8000001)
        assert result.reason == REASON_SCATTERED

    def test_sample_count_validated(self):
        det = ScriptedDetector([])
        with pytest.raises(InvalidArgument):
            consensus_detect(_IMG, "thing", det, samples=1)

    def test_threshold_validated(self):
        det = ScriptedDetector([])
        with pytest.raises(InvalidArgument):
            consensus_detect(_IMG, "thing", det, iou_threshold=0.0)
        with pytest.raises(InvalidArgument):
            consensus_detect(_IMG, "thing", det, iou_threshold=1.5)

    def test_five_samples_all_pairs_checked(self):
        box = BBox(0.2, 0.2, 0.6, 0.6)
        far = BBox(0.7, 0.7, 0.9, 0.9)
        det = ScriptedDetector([box, box, box, box, far])
        result = consensus_detect(_IMG, "thing", det, samples=5)
        assert result.reason == REASON_SCATTERED
        assert len(result.ious) == 10  # C(5, 2)

    @given(
        seed=st.integers(0, 2**31 - 1),
        low=st.floats(0.1, 0.8),
        high=st.floats(0.1, 0.8),
    )
    @settings(max_examples=40, deadline=None)
    def test_lower_threshold_accepts_superset(self, seed, low, high):
        rng = np.random.default_rng(seed)
        draws = []
        for _ in range(3):
            x0, y0 = rng.uniform(0, 0.5, 2)
            w, h = rng.uniform(0.1, 0.5, 2)
            draws.append(BBox(x0, y0, min(1.0, x0 + w), min(1.0, y0 + h)))
        lo, hi = sorted((low, high))
        res_lo = consensus_detect(_IMG, "x", ScriptedDetector(draws), iou_threshold=lo)
        res_hi = consensus_detect(_IMG, "x", ScriptedDetector(draws), iou_threshold=hi)
        if res_hi.accepted:
            assert res_lo.accepted


class FailingEraser(Eraser):
    identifier = "failing-eraser"

    def erase(self, image, mask):
        raise BackendUnavailable("inpainting service down")


@pytest.fixture(scope="module")
def world():
    suite = mock_suite(shapes_scenario("t-datagen", num_images=8, seed=5))
    return suite


class TestBuildTriplets:
    def _grounded_object(self, suite, scene_idx=0, obj_idx=0):
        spec = suite.scenario.scenes[scene_idx]
        obj = spec.objects[obj_idx]
        img = suite.scene_image(spec.image_id)
        return img, obj, obj.bbox(spec.width, spec.height)

    def test_one_triplet_per_caption_sharing_images(self, world):
        img, obj, box = self._grounded_object(world)
        captions = obj.captions(3)
        triplets = build_triplets(
            img, obj.label, captions, box, world.segmenter, world.eraser
        )
        assert len(triplets) == 3
        first = triplets[0]
        for t in triplets[1:]:
            assert t.source is first.source
            assert t.target is first.target
            assert t.mask is first.mask
        assert [t.instruction for t in triplets] == [f"Add {c}" for c in captions]
        assert [t.fine_caption_index for t in triplets] == [0, 1, 2]

    def test_source_differs_only_inside_mask(self, world):
        img, obj, box = self._grounded_object(world, 1)
        t = build_triplets(img, obj.label, obj.captions(1), box, world.segmenter, world.eraser)[0]
        outside = ~t.mask.bits
        assert np.array_equal(t.source.to_uint8()[outside], t.target.to_uint8()[outside])
        # and the object is actually gone: inside the mask the source shows
        # background, so source != target somewhere
        assert not np.array_equal(t.source.to_uint8(), t.target.to_uint8())

    def test_mask_is_dilated_segmentation(self, world):
        img, obj, box = self._grounded_object(world, 2)
        radius = 2
        t = build_triplets(
            img, obj.label, obj.captions(1), box, world.segmenter, world.eraser,
            dilation_radius=radius,
        )[0]
        raw = world.segmenter.segment(img, box)
        assert np.array_equal(t.mask.bits, dilate_mask(raw, radius).bits)
        assert t.provenance.dilation_radius == radius

    def test_empty_mask_skips_object(self, world):
        spec = world.scenario.scenes[0]
        img = world.scene_image(spec.image_id)
        # a background-only region segments to nothing
        cells = {o.cell for o in spec.objects}
        empty_box = None
        for candidate in (BBox(0.4, 0.4, 0.55, 0.55), BBox(0.0, 0.0, 0.12, 0.12), BBox(0.85, 0.85, 1.0, 1.0)):
            mask = world.segmenter.segment(img, candidate)
            if mask.is_empty():
                empty_box = candidate
                break
        assert empty_box is not None, f"fixture scenes occupy all probe cells: {cells}"
        with pytest.raises(SkipObject) as exc:
            build_triplets(img, "ghost", ("a ghost",), empty_box, world.segmenter, world.eraser)
        assert exc.value.reason == "empty-mask"

    def test_eraser_failure_skips_object(self, world):
        img, obj, box = self._grounded_object(world, 3)
        with pytest.raises(SkipObject) as exc:
            build_triplets(
                img, obj.label, obj.captions(1), box, world.segmenter, FailingEraser()
            )
        assert exc.value.reason == "erase-failed"

    def test_custom_template(self, world):
        img, obj, box = self._grounded_object(world, 4)
        t = build_triplets(
            img, obj.label, obj.captions(1), box, world.segmenter, world.eraser,
            instruction_template="{caption}",
        )[0]
        assert t.instruction == obj.captions(1)[0]

    def test_bad_template_rejected(self, world):
        img, obj, box = self._grounded_object(world)
        with pytest.raises(InvalidArgument):
            build_triplets(
                img, obj.label, obj.captions(1), box, world.segmenter, world.eraser,
                instruction_template="Add {capton}",
            )

    def test_default_dilation_scales_with_size(self):
        assert default_dilation_radius(512, 512) == 10
        assert default_dilation_radius(1024, 768) == 20
        assert default_dilation_radius(64, 64) == 1
        assert default_dilation_radius(256, 256) == 5


class TestPipeline:
    def _run(self, tmp_path, scenario, config=None):
        suite = mock_suite(scenario)
        input_dir = tmp_path / "inputs"
        suite.write_inputs(input_dir)
        out = tmp_path / "dataset"
        report = run_pipeline(input_dir, out, suite, config)
        return suite, out, report

    def test_fixture_yields_exact_count(self, tmp_path):
        scenario = shapes_scenario("t-pipe", num_images=5, objects_per_image=2, seed=7)
        _, out, report = self._run(tmp_path, scenario)
        expected = expected_record_count(5, 2, 3)
        assert report.records_written == expected
        manifest = DatasetManifest.open(out)
        assert manifest.count() == expected
        assert len(manifest.processed_ids()) == 5
        assert manifest.rejections() == []

    def test_validation_clean(self, tmp_path):
        scenario = shapes_scenario("t-pipe-v", num_images=4, seed=11)
        _, out, _ = self._run(tmp_path, scenario)
        report = validate_dataset(DatasetManifest.open(out))
        assert report.checked == expected_record_count(4, 2, 3)
        assert report.ok, report.violations

    def test_rerun_is_idempotent(self, tmp_path):
        scenario = shapes_scenario("t-pipe-i", num_images=3, seed=13)
        suite, out, first = self._run(tmp_path, scenario)
        again = run_pipeline(tmp_path / "inputs", out, suite)
        assert again.records_written == 0
        assert again.images_processed == 0
        assert DatasetManifest.open(out).count() == first.records_written

    def test_record_ids_deterministic_across_runs(self, tmp_path):
        scenario = shapes_scenario("t-pipe-d", num_images=4, seed=17)
        _, out_a, _ = self._run(tmp_path / "a", scenario)
        _, out_b, _ = self._run(tmp_path / "b", scenario, PipelineConfig(workers=3))
        ids_a = {r.id for r in DatasetManifest.open(out_a).records()}
        ids_b = {r.id for r in DatasetManifest.open(out_b).records()}
        assert ids_a == ids_b

    def test_empty_scene_processed_with_zero_records(self, tmp_path):
        scenario = shapes_scenario(
            "t-pipe-e", num_images=3, objects_per_image=1, empty_scenes=1, seed=19
        )
        _, out, report = self._run(tmp_path, scenario)
        manifest = DatasetManifest.open(out)
        assert report.images_processed == 3
        assert len(manifest.processed_ids()) == 3
        assert manifest.count() == expected_record_count(2, 1, 3)

    def test_noisy_detector_rejections_logged(self, tmp_path):
        scenario = shapes_scenario(
            "t-pipe-n", num_images=6, objects_per_image=1, detector_noise=0.15, seed=23
        )
        _, out, report = self._run(tmp_path, scenario)
        manifest = DatasetManifest.open(out)
        rejections = manifest.rejections()
        assert report.objects_rejected == len(rejections)
        assert rejections, "strong noise must reject at least one object"
        assert {r["reason"] for r in rejections} <= {"scattered", "detection-failed"}
        for row in rejections:
            assert len(row["boxes"]) == 3
        # accepted + rejected covers every object
        assert manifest.count() // 3 + len(rejections) == 6

    def test_oversized_object_rejected(self, tmp_path):
        from insertkit.backends.mock import MockScenario, SceneObject, SceneSpec

        big = SceneObject("red", "square", "center", cx=0.5, cy=0.5, radius=0.45)
        scenario = MockScenario(
            name="t-pipe-big",
            scenes=(SceneSpec("img0000", 64, 64, (big,)),),
        )
        _, out, report = self._run(tmp_path, scenario)
        manifest = DatasetManifest.open(out)
        assert manifest.count() == 0
        rows = manifest.rejections()
        assert len(rows) == 1 and rows[0]["reason"] == "too-large"
        assert report.images_processed == 1

    def test_resume_skips_prior_work(self, tmp_path):
        scenario = shapes_scenario("t-pipe-r", num_images=4, seed=29)
        suite = mock_suite(scenario)
        input_dir = tmp_path / "inputs"
        suite.write_inputs(input_dir)
        out = tmp_path / "dataset"
        manifest = DatasetManifest.create(out)
        # pretend two images were already done by an earlier run
        manifest.mark_processed("img0000")
        manifest.mark_processed("img0002")
        report = run_pipeline(input_dir, out, suite)
        assert report.images_processed == 2
        assert report.records_written == expected_record_count(2, 2, 3)

    def test_validate_catches_outside_mask_tamper(self, tmp_path):
        scenario = shapes_scenario("t-pipe-t", num_images=2, seed=31)
        _, out, _ = self._run(tmp_path, scenario)
        manifest = DatasetManifest.open(out)
        record = next(manifest.records())
        src_path = manifest.root / record.src
        img = RasterImage.load(src_path)
        mask = BinaryMask.load(manifest.root / record.mask)
        arr = img.to_uint8().copy()
        ys, xs = np.nonzero(~mask.bits)
        arr[ys[0], xs[0]] = 255 - arr[ys[0], xs[0]]
        RasterImage(arr).save_png(src_path)
        report = validate_dataset(manifest)
        assert any(
            v.kind == "outside-mask-mismatch" and v.record_id == record.id
            for v in report.violations
        )

    def test_validate_catches_corrupt_file(self, tmp_path):
        scenario = shapes_scenario("t-pipe-c", num_images=2, seed=37)
        _, out, _ = self._run(tmp_path, scenario)
        manifest = DatasetManifest.open(out)
        record = next(manifest.records())
        (manifest.root / record.tgt).write_bytes(b"junk")
        report = validate_dataset(manifest)
        kinds = {v.kind for v in report.violations if v.record_id == record.id}
        assert "decode-failed" in kinds

    def test_validate_catches_empty_instruction(self, tmp_path):
        scenario = shapes_scenario("t-pipe-ei", num_images=1, objects_per_image=1, seed=41)
        _, out, _ = self._run(tmp_path, scenario)
        manifest_path = out / "manifest.jsonl"
        lines = manifest_path.read_text().strip().splitlines()
        doc = json.loads(lines[0])
        doc["instruction"] = "   "
        lines[0] = json.dumps(doc)
        manifest_path.write_text("\n".join(lines) + "\n")
        report = validate_dataset(DatasetManifest.open(out))
        assert any(v.kind == "empty-instruction" for v in report.violations)

    def test_meta_written(self, tmp_path):
        scenario = shapes_scenario("t-pipe-m", num_images=1, seed=43)
        _, out, _ = self._run(tmp_path, scenario, PipelineConfig(temperature=0.3))
        meta = DatasetManifest.open(out).read_meta()
        assert meta["temperature"] == 0.3
        assert meta["iou_threshold"] == 0.8
        assert "backends" in meta

    def test_missing_input_dir(self, tmp_path):
        suite = mock_suite(shapes_scenario("t-pipe-x", num_images=1))
        with pytest.raises(InvalidArgument):
            run_pipeline(tmp_path / "nope", tmp_path / "out", suite)
