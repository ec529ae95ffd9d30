"""Evaluation suite tests.

Oracles: fixture embedding tables give hand-computable cosines (including
the 1/sqrt(2) directional case), and a scripted generator plus a score
table makes the benchmark aggregate an exact hand-derived mean.
"""

import csv
import json
import math
import random

import numpy as np
import pytest

from doubles import FixtureEmbedder, ScriptedGenerator, basis, image_key, label_image
from insertkit.backends.mock import mock_suite
from insertkit.errors import InvalidArgument
from insertkit.evalsuite import (
    BenchmarkRecord,
    PreferenceRecord,
    clip_dir,
    clip_out,
    evaluate_benchmark,
    load_benchmark,
    win_rate,
    write_report,
)
from insertkit.seeds import derive_seed


def make_record(i: int, image_path: str = "img.png") -> BenchmarkRecord:
    return BenchmarkRecord(
        id=f"rec{i}",
        input_image=image_path,
        instruction="add a cat",
        input_caption="a room",
        output_caption="a room with a cat",
    )


class TestRecordTypes:
    @pytest.mark.parametrize(
        "field", ["id", "input_image", "instruction", "input_caption", "output_caption"]
    )
    def test_empty_text_fields_rejected(self, field):
        kwargs = dict(
            id="r",
            input_image="x.png",
            instruction="add",
            input_caption="before",
            output_caption="after",
        )
        kwargs[field] = "   "
        with pytest.raises(InvalidArgument):
            BenchmarkRecord(**kwargs)

    def test_preference_same_models_rejected(self):
        with pytest.raises(InvalidArgument):
            PreferenceRecord("r", "m1", "m1", "a")

    def test_preference_bad_winner_rejected(self):
        with pytest.raises(InvalidArgument):
            PreferenceRecord("r", "m1", "m2", "m1")


class TestClipOut:
    def test_identical_embeddings_give_one(self):
        image = label_image(1)
        emb = FixtureEmbedder().set_image(image, basis(0)).set_text("cap", basis(0))
        assert clip_out(image, "cap", emb) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal_embeddings_give_zero(self):
        image = label_image(1)
        emb = FixtureEmbedder().set_image(image, basis(0)).set_text("cap", basis(1))
        assert clip_out(image, "cap", emb) == 0.0

    def test_invariant_to_positive_rescaling(self):
        image = label_image(1)
        raw_i, raw_t = np.array([0.2, 0.5, 0.1, 0.0]), np.array([1.0, 1.0, 0.0, 0.0])
        a = FixtureEmbedder().set_image(image, raw_i).set_text("cap", raw_t)
        b = FixtureEmbedder().set_image(image, raw_i * 9.0).set_text("cap", raw_t * 0.25)
        assert clip_out(image, "cap", a) == pytest.approx(clip_out(image, "cap", b), abs=1e-14)

    def test_bounded(self):
        image = label_image(1)
        emb = FixtureEmbedder().set_image(image, [-3, 1, 2, 0]).set_text("cap", [1, -2, 0.5, 0])
        assert -1.0 <= clip_out(image, "cap", emb) <= 1.0


class TestClipDir:
    def fixture(self, img_before, img_after, txt_before, txt_after):
        before, after = label_image(1), label_image(2)
        emb = (
            FixtureEmbedder()
            .set_image(before, img_before)
            .set_image(after, img_after)
            .set_text("before", txt_before)
            .set_text("after", txt_after)
        )
        return before, after, emb

    def test_identical_inputs_degenerate_to_zero(self):
        image = label_image(1)
        emb = FixtureEmbedder().set_image(image, basis(0)).set_text("same", basis(1))
        assert clip_dir(image, image, "same", "same", emb) == 0.0

    def test_zero_image_delta_alone_degenerates(self):
        before, after, emb = self.fixture(basis(0), basis(0), basis(1), basis(2))
        assert clip_dir(before, after, "before", "after", emb) == 0.0

    def test_hand_computed_diagonal_value(self):
        # delta_img = (1,0,0,0); delta_txt = (1,1,0,0)/sqrt(2)
        # cosine = 1/sqrt(2) = 0.707107 (to 1e-6).
        s = 1.0 / math.sqrt(2.0)
        before, after, emb = self.fixture(
            [1, 1, 0, 0], [2, 1, 0, 0], [1, 0, 0, 0], [1 + s, s, 0, 0]
        )
        value = clip_dir(before, after, "before", "after", emb)
        assert value == pytest.approx(0.707107, abs=1e-6)

    def test_sign_symmetry_under_simultaneous_swap(self):
        before, after, emb = self.fixture(
            [0.2, 0.9, 0.1, 0], [0.7, 0.3, 0.4, 0], [1, 2, 0, 0], [0.5, 2.5, 1, 0]
        )
        forward = clip_dir(before, after, "before", "after", emb)
        swapped = clip_dir(after, before, "after", "before", emb)
        assert forward == swapped  # cos(-a, -b) == cos(a, b), exactly

    def test_opposite_directions_give_minus_one(self):
        before, after, emb = self.fixture(
            [0, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0], [0, 0, 0, 0]
        )
        assert clip_dir(before, after, "before", "after", emb) == pytest.approx(
            -1.0, abs=1e-15
        )

    def test_bounded(self):
        before, after, emb = self.fixture(
            [0.1, 0.9, 0, 0], [0.9, 0.1, 0.2, 0], [2, 1, 0, 0], [1, 3, 0.5, 0]
        )
        assert -1.0 <= clip_dir(before, after, "before", "after", emb) <= 1.0


def build_benchmark(tmp_path, n=3):
    """n records whose edited images carry hand-assigned metric scores."""
    gen = ScriptedGenerator({})
    emb = FixtureEmbedder()
    records = []
    # Text embeddings shared by all records.
    emb.set_text("a room", [1.0, 0.0, 0.0, 0.0])
    out_scores = [0.9, 0.5, 0.1][:n]
    for i in range(n):
        src = gen.ensure(10 + i)
        path = tmp_path / f"in{i}.png"
        src.save_png(path)
        edited_label = 100 + i
        gen.script[(10 + i, "add a cat")] = [edited_label]
        edited = gen.ensure(edited_label)
        # clip_out: edited image scores out_scores[i] against the output
        # caption e0; clip_dir fixtures: delta_img = edited - src.
        emb.set_text("a room with a cat", basis(0))
        emb.set_image(src, [0.0, 1.0, 0.0, 0.0])
        s = out_scores[i]
        emb.set_image(edited, [s, 1.0 + math.sqrt(1 - s * s), 0.0, 0.0])
        records.append(make_record(i, str(path)))
    return gen, emb, records, out_scores


class TestEvaluateBenchmark:
    def test_aggregate_is_hand_computed_mean(self, tmp_path):
        gen, emb, records, out_scores = build_benchmark(tmp_path)
        report = evaluate_benchmark(records, gen, emb, seed=0)
        assert report.evaluated == 3 and report.failed == 0
        # clip_out of record i: cosine([s, 1+sqrt(1-s^2)], e0) — compute the
        # expected values through plain float arithmetic, not the module.
        expected_out = []
        for s in out_scores:
            y = 1.0 + math.sqrt(1 - s * s)
            expected_out.append(s / math.hypot(s, y))
        for rec, want in zip(report.records, expected_out):
            assert rec.clip_out == pytest.approx(want, abs=1e-12)
        assert report.clip_out_mean == pytest.approx(
            sum(expected_out) / 3.0, abs=1e-12
        )

    def test_aggregate_equals_exact_mean_of_columns(self, tmp_path):
        gen, emb, records, _ = build_benchmark(tmp_path)
        report = evaluate_benchmark(records, gen, emb, seed=0)
        assert report.clip_out_mean == float(
            np.mean([r.clip_out for r in report.records])
        )
        assert report.clip_dir_mean == float(
            np.mean([r.clip_dir for r in report.records])
        )

    def test_order_independent_per_record_results(self, tmp_path):
        gen, emb, records, _ = build_benchmark(tmp_path)
        forward = evaluate_benchmark(records, gen, emb, seed=5)
        shuffled = list(records)
        random.Random(1).shuffle(shuffled)
        backward = evaluate_benchmark(shuffled, gen, emb, seed=5)
        by_id = {r.id: r for r in backward.records}
        for rec in forward.records:
            assert by_id[rec.id].clip_out == rec.clip_out
            assert by_id[rec.id].clip_dir == rec.clip_dir
        assert forward.clip_out_mean == pytest.approx(backward.clip_out_mean, abs=1e-15)

    def test_per_record_seed_derivation(self, tmp_path):
        gen, emb, records, _ = build_benchmark(tmp_path)
        evaluate_benchmark(records, gen, emb, seed=21, workers=1)
        seeds = {call[3] for call in gen.calls}
        assert seeds == {derive_seed(21, "eval", r.id) for r in records}

    def test_failed_record_counted_but_excluded(self, tmp_path):
        gen, emb, records, out_scores = build_benchmark(tmp_path)
        del gen.script[(11, "add a cat")]  # record rec1 now fails
        report = evaluate_benchmark(records, gen, emb, seed=0)
        assert report.evaluated == 2 and report.failed == 1
        failed = [r for r in report.records if r.failed]
        assert [r.id for r in failed] == ["rec1"]
        assert failed[0].clip_out is None and failed[0].error
        ok_out = [r.clip_out for r in report.records if not r.failed]
        assert report.clip_out_mean == float(np.mean(ok_out))

    def test_unreadable_image_marks_record_failed(self, tmp_path):
        gen, emb, records, _ = build_benchmark(tmp_path)
        records.append(make_record(9, str(tmp_path / "missing.png")))
        report = evaluate_benchmark(records, gen, emb, seed=0)
        assert report.failed == 1
        assert report.records[-1].failed

    def test_all_failed_yields_null_means(self, tmp_path):
        records = [make_record(0, str(tmp_path / "none.png"))]
        report = evaluate_benchmark(records, ScriptedGenerator({}), FixtureEmbedder())
        assert report.evaluated == 0 and report.failed == 1
        assert report.clip_out_mean is None and report.clip_dir_mean is None

    def test_empty_records_rejected(self):
        with pytest.raises(InvalidArgument):
            evaluate_benchmark([], ScriptedGenerator({}), FixtureEmbedder())

    def test_invalid_workers_rejected(self, tmp_path):
        gen, emb, records, _ = build_benchmark(tmp_path)
        with pytest.raises(InvalidArgument):
            evaluate_benchmark(records, gen, emb, workers=0)

    def test_deterministic_with_mock_suite(self, tmp_path):
        suite = mock_suite("shapes-small")
        paths = []
        for i in range(3):
            p = tmp_path / f"scene{i}.png"
            suite.scene_image(f"img000{i}").save_png(p)
            paths.append(p)
        records = [make_record(i, str(p)) for i, p in enumerate(paths)]
        # The mock captioner vocabulary does not know "cat"; use shapes.
        records = [
            BenchmarkRecord(
                id=r.id,
                input_image=r.input_image,
                instruction="add a red circle at top left",
                input_caption="a scene",
                output_caption="a scene with a red circle",
            )
            for r in records
        ]
        r1 = evaluate_benchmark(records, suite.generator, suite.embedder, seed=13)
        r2 = evaluate_benchmark(records, suite.generator, suite.embedder, seed=13)
        assert [c.clip_out for c in r1.records] == [c.clip_out for c in r2.records]
        assert [c.clip_dir for c in r1.records] == [c.clip_dir for c in r2.records]
        assert r1.model == "mock-generator"


class TestBenchmarkIO:
    def test_jsonl_round_trip_and_relative_paths(self, tmp_path):
        (tmp_path / "imgs").mkdir()
        label_image(3).save_png(tmp_path / "imgs" / "a.png")
        bench = tmp_path / "bench.jsonl"
        rows = [
            {
                "id": "r1",
                "input_image": "imgs/a.png",
                "instruction": "add a cat",
                "input_caption": "x",
                "output_caption": "y",
            },
            {
                "id": "r2",
                "input_image": str(tmp_path / "imgs" / "a.png"),
                "instruction": "add a dog",
                "input_caption": "x",
                "output_caption": "z",
            },
        ]
        bench.write_text(
            "\n".join(json.dumps(r) for r in rows) + "\n\n", encoding="utf-8"
        )
        records = load_benchmark(bench)
        assert [r.id for r in records] == ["r1", "r2"]
        # Relative path resolved against the benchmark file's directory.
        assert records[0].input_image == str(tmp_path / "imgs" / "a.png")
        assert records[1].input_image == str(tmp_path / "imgs" / "a.png")

    def test_bad_json_line_rejected_with_location(self, tmp_path):
        bench = tmp_path / "bench.jsonl"
        bench.write_text('{"id": "r1"\n', encoding="utf-8")
        with pytest.raises(InvalidArgument, match="bench.jsonl:1"):
            load_benchmark(bench)

    def test_missing_field_rejected(self, tmp_path):
        bench = tmp_path / "bench.jsonl"
        bench.write_text(json.dumps({"id": "r1", "input_image": "a.png"}) + "\n")
        with pytest.raises(InvalidArgument, match="missing field"):
            load_benchmark(bench)

    def test_report_files_json_and_csv_twin(self, tmp_path):
        gen, emb, records, _ = build_benchmark(tmp_path)
        del gen.script[(12, "add a cat")]  # one failure for the status column
        report = evaluate_benchmark(records, gen, emb, seed=0)
        json_path = write_report(report, tmp_path / "out")
        doc = json.loads(json_path.read_text(encoding="utf-8"))
        assert doc["evaluated"] == 2 and doc["failed"] == 1
        assert len(doc["records"]) == 3
        assert doc["clip_out_mean"] == report.clip_out_mean

        with (tmp_path / "out" / "report.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["id", "status", "clip_out", "clip_dir", "error"]
        assert len(rows) == 1 + 3 + 1  # header + records + aggregate
        assert rows[-1][0] == "aggregate"
        # repr round-trip keeps the aggregate exact.
        assert float(rows[-1][2]) == report.clip_out_mean
        statuses = [row[1] for row in rows[1:-1]]
        assert statuses.count("ok") == 2 and statuses.count("failed") == 1


class TestWinRate:
    def test_unanimous_winner_is_100(self):
        prefs = [PreferenceRecord(f"r{i}", "ours", "base", "a") for i in range(10)]
        table = win_rate(prefs)
        assert table["ours"] == 100.00
        assert table["base"] == 0.00

    def test_three_of_ten_is_30(self):
        prefs = [
            PreferenceRecord(f"r{i}", "ours", "base", "a" if i < 3 else "b")
            for i in range(10)
        ]
        assert win_rate(prefs)["ours"] == 30.00
        assert win_rate(prefs)["base"] == 70.00

    def test_two_decimal_rounding(self):
        prefs = [
            PreferenceRecord("r0", "m1", "m2", "a"),
            PreferenceRecord("r1", "m1", "m2", "b"),
            PreferenceRecord("r2", "m1", "m2", "b"),
        ]
        table = win_rate(prefs)
        assert table["m1"] == 33.33
        assert table["m2"] == 66.67

    def test_head_to_head_sums_to_100_up_to_rounding(self):
        rng = random.Random(7)
        prefs = [
            PreferenceRecord(f"r{i}", "m1", "m2", rng.choice("ab")) for i in range(37)
        ]
        table = win_rate(prefs)
        assert table["m1"] + table["m2"] == pytest.approx(100.0, abs=0.01)

    def test_multi_model_participation_counts(self):
        prefs = [
            PreferenceRecord("r0", "m1", "m2", "a"),  # m1 beats m2
            PreferenceRecord("r1", "m1", "m3", "b"),  # m3 beats m1
            PreferenceRecord("r2", "m2", "m3", "a"),  # m2 beats m3
        ]
        table = win_rate(prefs)
        assert table == {"m1": 50.0, "m2": 50.0, "m3": 50.0}

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgument):
            win_rate([])
