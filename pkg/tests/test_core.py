"""Domain types, RTTM I/O, collar merging and manifests."""

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diarcluster.core import (
    ClusterModel,
    FrameMatrix,
    RttmParseError,
    Segment,
    SegmentationError,
    SegmentEmbedding,
    SegmentTable,
    SessionEntry,
    SpeakerProfiles,
    format_seconds,
    load_manifest,
    merge_short_silences,
    merge_short_silences_with_map,
    read_rttm,
    write_manifest,
    write_rttm,
)


def _table(*rows, sid="m1"):
    return SegmentTable(sid, tuple(Segment(a, b, s) for a, b, s in rows))


class TestTypes:
    def test_frame_matrix_rejects_bad_input(self):
        with pytest.raises(ValueError):
            FrameMatrix("s", np.zeros((0, 3)), 0.01)
        with pytest.raises(ValueError):
            FrameMatrix("s", np.array([[np.nan]]), 0.01)
        with pytest.raises(ValueError):
            FrameMatrix("s", np.zeros((2, 2)), 0.0)

    def test_frame_matrix_is_read_only(self):
        fm = FrameMatrix("s", np.zeros((3, 2)), 0.01)
        with pytest.raises(ValueError):
            fm.frames[0, 0] = 1.0

    @pytest.mark.parametrize(
        "start,end,expected",
        [
            (0.0, 1.0, (0, 99)),
            (0.005, 0.015, (0, 1)),
            (1.0, 1.01, (100, 100)),
            (5.0, 6.0, (0, -1)),  # beyond the last frame
            (1.5, 9.0, (150, 199)),  # clamped
        ],
    )
    def test_frame_range(self, start, end, expected):
        fm = FrameMatrix("s", np.zeros((200, 1)), 0.01)
        assert fm.frame_range(Segment(start, end)) == expected

    def test_frame_range_respects_start_time(self):
        fm = FrameMatrix("s", np.zeros((100, 1)), 0.01, start_time=10.0)
        assert fm.frame_range(Segment(10.2, 10.5)) == (20, 49)

    @pytest.mark.parametrize("start,end", [(-0.1, 1.0), (1.0, 1.0), (2.0, 1.0)])
    def test_segment_bounds(self, start, end):
        with pytest.raises(SegmentationError):
            Segment(start, end)

    def test_table_sorts_and_rejects_overlap(self):
        t = _table((2, 5, "B"), (0, 2, "A"))
        assert [s.ref_speaker for s in t] == ["A", "B"]
        with pytest.raises(SegmentationError, match=r"\[0, 3\].*\[2, 5\]"):
            _table((0, 3, "A"), (2, 5, "B"))

    def test_embedding_invariants(self):
        with pytest.raises(ValueError):
            SegmentEmbedding(np.array([np.inf]), 1.0, 0)
        with pytest.raises(ValueError):
            SegmentEmbedding(np.zeros(2), 0.0, 0)

    def test_cluster_model_validation_and_json(self):
        m = ClusterModel(2, np.eye(2), np.array([0, 1, 1]), "plusplus_init", seed=3)
        assert m.cluster_sizes().tolist() == [1, 2]
        back = ClusterModel.from_json(json.loads(json.dumps(m.to_json())))
        np.testing.assert_array_equal(back.centroids, m.centroids)
        np.testing.assert_array_equal(back.assignments, m.assignments)
        assert back.seed == 3
        with pytest.raises(ValueError):
            ClusterModel(2, np.eye(2), np.array([0, 2]))
        with pytest.raises(ValueError):
            ClusterModel(3, np.eye(2), np.array([0]))
        with pytest.raises(ValueError):
            ClusterModel(2, np.eye(2), np.array([0]), source="magic")

    def test_profiles_validation(self):
        with pytest.raises(ValueError):
            SpeakerProfiles(("a", "a"), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            SpeakerProfiles(("a",), np.zeros((2, 3)))
        p = SpeakerProfiles(("a", "b"), np.arange(6.0).reshape(2, 3))
        back = SpeakerProfiles.from_json(json.loads(json.dumps(p.to_json())))
        assert back.labels == p.labels
        np.testing.assert_array_equal(back.vectors, p.vectors)


class TestRttm:
    def test_single_line(self):
        t = read_rttm("SPEAKER m1 1 0.00 2.50 <NA> <NA> spkA <NA>\n")
        assert t.session_id == "m1"
        assert t.segments == (Segment(0.0, 2.5, "spkA"),)

    def test_ten_fields_and_other_records(self):
        text = (
            "SPKR-INFO m1 1 <NA> <NA> <NA> unknown spkA <NA> <NA>\n"
            "SPEAKER m1 1 0.00 2.00 <NA> <NA> spkA <NA> <NA>\n"
            "SPEAKER m1 1 2.00 3.00 <NA> <NA> spkB <NA> <NA>\n"
        )
        t = read_rttm(text)
        assert [(s.start, s.end, s.ref_speaker) for s in t] == [(0.0, 2.0, "spkA"), (2.0, 5.0, "spkB")]

    def test_out_of_order_lines_are_sorted(self):
        text = "SPEAKER m1 1 2.00 3.00 <NA> <NA> spkB <NA>\nSPEAKER m1 1 0.00 2.00 <NA> <NA> spkA <NA>\n"
        assert [s.start for s in read_rttm(text)] == [0.0, 2.0]

    def test_decimal_end_times(self):
        t = read_rttm("SPEAKER m1 1 0.10 0.20 <NA> <NA> a <NA>\n")
        assert t[0].end == 0.3

    @pytest.mark.parametrize(
        "line,lineno",
        [
            ("SPEAKER m1 1 0.00 <NA> <NA> a <NA>", 2),
            ("SPEAKER m1 1 abc 1.0 <NA> <NA> a <NA>", 2),
            ("SPEAKER m1 1 0.0 -1.0 <NA> <NA> a <NA>", 2),
            ("SPEAKER m2 1 5.0 1.0 <NA> <NA> a <NA>", 2),
        ],
    )
    def test_parse_errors_carry_line_numbers(self, line, lineno):
        text = "SPEAKER m1 1 0.00 1.00 <NA> <NA> a <NA>\n" + line + "\n"
        with pytest.raises(RttmParseError) as err:
            read_rttm(text)
        assert err.value.lineno == lineno
        assert f"line {lineno}" in str(err.value)

    def test_overlap_is_a_validation_error(self):
        text = "SPEAKER m1 1 0.00 3.00 <NA> <NA> a <NA>\nSPEAKER m1 1 2.00 3.00 <NA> <NA> b <NA>\n"
        with pytest.raises(SegmentationError):
            read_rttm(text)

    def test_reads_paths_and_streams(self, tmp_path):
        text = "SPEAKER m1 1 0.00 2.50 <NA> <NA> spkA <NA>\n"
        path = tmp_path / "x.rttm"
        path.write_text(text)
        assert read_rttm(path) == read_rttm(io.StringIO(text)) == read_rttm(str(path))

    def test_round_trip(self):
        t = _table((0, 2, "spkA"), (2, 5, "spkB"))
        assert read_rttm(write_rttm(t)) == t

    def test_write_line_layout(self):
        t = _table((0, 2.5, "spkA"))
        assert write_rttm(t) == "SPEAKER m1 1 0.00 2.50 <NA> <NA> spkA <NA> <NA>\n"
        assert write_rttm(t, ["7"]).split()[7] == "7"

    def test_empty_table(self):
        assert write_rttm(SegmentTable("m1")) == ""

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            write_rttm(_table((0, 1, "a")), ["x", "y"])

    @pytest.mark.parametrize(
        "value,text", [(1.005, "1.00"), (0.125, "0.12"), (0.135, "0.14"), (2.5, "2.50"), (3.0, "3.00")]
    )
    def test_round_half_even(self, value, text):
        assert format_seconds(value) == text

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 500), st.integers(1, 500), st.sampled_from(["a", "b", "c"])),
            min_size=1,
            max_size=12,
        )
    )
    def test_round_trip_property(self, rows):
        segs, t_cs = [], 0
        for gap, dur, spk in rows:
            start = t_cs + gap
            segs.append(Segment(start / 100, (start + dur) / 100, spk))
            t_cs = start + dur
        table = SegmentTable("sess", tuple(segs))
        back = read_rttm(write_rttm(table))
        assert [s.ref_speaker for s in back] == table.labels
        np.testing.assert_allclose([s.start for s in back], [s.start for s in table], atol=1e-9)
        np.testing.assert_allclose([s.end for s in back], [s.end for s in table], atol=1e-9)


class TestCollar:
    def test_same_speaker_gap_merges(self):
        out = merge_short_silences(_table((0, 1, "spkA"), (1.1, 2, "spkA")))
        assert out.segments == (Segment(0, 2, "spkA"),)

    def test_long_gap_untouched(self):
        t = _table((0, 1, "spkA"), (1.5, 2, "spkA"))
        assert merge_short_silences(t) == t

    def test_cross_speaker_gap_split_evenly(self):
        out = merge_short_silences(_table((0, 1, "spkA"), (1.1, 2, "spkB")))
        assert out.segments == (Segment(0, 1.05, "spkA"), Segment(1.05, 2, "spkB"))

    def test_gap_equal_to_collar_is_kept(self):
        t = _table((0, 1, "a"), (1.25, 2, "a"))
        assert len(merge_short_silences(t)) == 2

    def test_mapping(self):
        t = _table((0, 1, "a"), (1.1, 2, "a"), (2.1, 3, "b"), (4, 5, "b"))
        out, mapping = merge_short_silences_with_map(t)
        assert len(out) == 3
        assert mapping.tolist() == [0, 0, 1, 2]

    def test_negative_collar(self):
        with pytest.raises(ValueError):
            merge_short_silences(_table((0, 1, "a")), -0.1)

    def test_empty(self):
        assert len(merge_short_silences(SegmentTable("x"))) == 0

    @settings(max_examples=80, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(0, 60), st.integers(1, 300), st.sampled_from(["a", "b"])),
            min_size=1,
            max_size=15,
        ),
        st.sampled_from([0.0, 0.1, 0.25, 0.5]),
    )
    def test_idempotent_and_non_overlapping(self, rows, collar):
        segs, t_cs = [], 0
        for gap, dur, spk in rows:
            start = t_cs + gap
            segs.append(Segment(start / 100, (start + dur) / 100, spk))
            t_cs = start + dur
        once = merge_short_silences(SegmentTable("s", tuple(segs)), collar)
        twice = merge_short_silences(once, collar)
        assert once == twice
        for a, b in zip(once, list(once)[1:]):
            assert b.start >= a.end - 1e-9


class TestManifest:
    def test_round_trip_resolves_relative_paths(self, tmp_path):
        entries = [SessionEntry("s0", "s0.frames", "s0.rttm", 4, {"note": "x"})]
        write_manifest(tmp_path / "manifest.json", entries)
        back = load_manifest(tmp_path / "manifest.json")
        assert back[0].frames_path == str(tmp_path / "s0.frames")
        assert back[0].num_speakers == 4
        assert back[0].extra == {"note": "x"}

    def test_plain_list(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps([{"session_id": "a", "frames_path": "a.f", "rttm_path": "a.r"}]))
        (entry,) = load_manifest(tmp_path / "m.json")
        assert entry.num_speakers is None
