import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DOWN, UP, seq, traces
from wfbounds.trace_model import (
    UNMONITORED,
    Direction,
    EmptyDatasetError,
    Label,
    LabeledDataset,
    PacketSequence,
    TraceFormatError,
    TraceValidationError,
    direction_string,
    load_dataset,
    parse_trace,
    serialize_trace,
    summarize,
    write_dataset,
)


class TestPacketSequence:
    def test_times_are_shifted_to_start_at_zero(self):
        p = PacketSequence([2.0, 2.5], [100, 200], [UP, DOWN])
        assert p.times.tolist() == [0.0, 0.5]

    @pytest.mark.parametrize(
        "times,sizes,dirs",
        [
            ([], [], []),
            ([0.0, -1.0], [10, 10], [UP, UP]),
            ([0.0], [0], [UP]),
            ([0.0], [1501], [UP]),
            ([0.0], [10], [0]),
            ([float("nan")], [10], [UP]),
        ],
    )
    def test_invalid_sequences_are_rejected(self, times, sizes, dirs):
        with pytest.raises(ValueError):
            PacketSequence(times, sizes, dirs)

    def test_immutable(self):
        p = seq((0, 10, UP))
        with pytest.raises(AttributeError):
            p.times = None
        with pytest.raises(ValueError):
            p.times[0] = 5.0

    def test_packets_and_equality(self):
        p = seq((0, 512, UP), (1, 600, DOWN))
        assert p[1].size == 600 and p[1].direction is Direction.IN
        assert p == seq((0, 512, UP), (1, 600, DOWN))
        assert hash(p) == hash(seq((0, 512, UP), (1, 600, DOWN)))
        assert p != seq((0, 512, UP), (1, 600, UP))


class TestLabel:
    def test_unmonitored_is_unique_and_sorts_last(self):
        assert Label(None) == UNMONITORED
        assert not UNMONITORED.is_monitored
        assert sorted([UNMONITORED, Label.monitored("b"), Label.monitored("a")]) == [
            Label.monitored("a"),
            Label.monitored("b"),
            UNMONITORED,
        ]


class TestParse:
    def test_cell_magnitudes(self):
        p = parse_trace("0.0\t1\n0.5\t-1", cell_size=512)
        assert list(p) == [(0.0, 512, Direction.OUT), (0.5, 512, Direction.IN)]

    def test_byte_magnitude(self):
        assert list(parse_trace("0.0\t-600")) == [(0.0, 600, Direction.IN)]

    def test_times_normalized(self):
        assert parse_trace("3.0\t1\n4.0\t1").times.tolist() == [0.0, 1.0]

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(TraceFormatError, match="line 2"):
            parse_trace("0.0\t1\nfoo\n")

    def test_zero_magnitude(self):
        with pytest.raises(TraceFormatError, match="zero"):
            parse_trace("0.0\t0")

    def test_decreasing_times(self):
        with pytest.raises(TraceValidationError):
            parse_trace("1.0\t1\n0.5\t1")

    def test_empty(self):
        with pytest.raises(TraceFormatError):
            parse_trace("\n\n")

    def test_blank_lines_ignored(self):
        assert len(parse_trace("0\t1\n\n0.1\t-1\n")) == 2

    @settings(max_examples=60, deadline=None)
    @given(traces(sizes=st.integers(2, 1500)))
    def test_round_trip(self, p):
        assert parse_trace(serialize_trace(p)) == p

    def test_round_trip_of_one_byte_packets_needs_unit_cells(self):
        p = seq((0, 1, UP), (0.25, 7, DOWN))
        assert parse_trace(serialize_trace(p), cell_size=1) == p


class TestDataset:
    def test_load_is_lexicographic_and_labelled(self, tmp_path):
        (tmp_path / "b-0").write_text("0\t1\n")
        (tmp_path / "a-1").write_text("0\t-1\n0.1\t1\n")
        (tmp_path / "a-0").write_text("0\t1\n")
        (tmp_path / "README").write_text("not a trace")
        ds = load_dataset(tmp_path)
        assert ds.names == ("a-0", "a-1", "b-0")
        assert [str(y) for y in ds.labels] == ["a", "a", "b"]
        assert ds.page_count == 2
        assert load_dataset(tmp_path) == ds

    def test_two_pages_one_file_each(self, tmp_path):
        (tmp_path / "x-0").write_text("0\t1\n")
        (tmp_path / "y-0").write_text("0\t1\n")
        ds = load_dataset(tmp_path)
        assert len(ds) == 2 and ds.page_count == 2

    def test_empty_directory(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            load_dataset(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")

    def test_bad_file_names_offender(self, tmp_path):
        (tmp_path / "a-0").write_text("0\tzz\n")
        with pytest.raises(TraceFormatError, match="a-0"):
            load_dataset(tmp_path)

    def test_write_then_load(self, tmp_path, small_dataset):
        names = [f"{y}-{i:02d}" for i, y in enumerate(small_dataset.labels)]
        ds = LabeledDataset(small_dataset.traces, small_dataset.labels, names)
        write_dataset(ds, tmp_path)
        assert load_dataset(tmp_path) == ds

    def test_counts_and_subset(self, small_dataset):
        counts = small_dataset.instances_per_page()
        assert set(counts.values()) == {6}
        sub = small_dataset.subset([0, 7])
        assert sub.labels == (small_dataset.labels[0], small_dataset.labels[7])

    def test_single_label_is_not_evaluable(self):
        ds = LabeledDataset((seq((0, 1, UP)),), (Label.monitored("a"),))
        with pytest.raises(ValueError):
            ds.require_evaluable()


class TestDirectionString:
    def test_examples(self):
        assert direction_string(seq((0, 512, UP), (0.1, 512, DOWN), (0.2, 512, DOWN))) == "011"
        assert direction_string(seq((0, 512, UP))) == "0"
        assert direction_string(seq(*[(i, 512, DOWN) for i in range(4)])) == "1111"

    @given(traces())
    def test_length_matches(self, p):
        assert len(direction_string(p)) == len(p)


class TestSummarize:
    def test_examples(self):
        assert summarize(seq((0, 512, UP), (1.0, 512, DOWN))) == (1, 1, 512, 512, 1.0)
        assert summarize(seq((0, 512, UP))).duration == 0
        assert summarize(seq((0, 100, UP), (1, 100, UP), (2, 100, UP))) == (0, 3, 0, 300, 2.0)

    @given(traces())
    def test_partition(self, p):
        s = summarize(p)
        assert s.n_in + s.n_out == len(p)
        assert s.bytes_in + s.bytes_out == int(np.sum(p.sizes))
