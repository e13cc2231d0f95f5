import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crosscity.data import (CityDataset, NormStats, RegionGrid,
                            UrbanImageTimeSeries, denormalize,
                            frames_from_csv, load_dataset, normalize,
                            read_tensor, save_dataset, window,
                            window_timestamps, write_tensor)
from crosscity.errors import DataError


def make_series(t_count=5, w=2, h=3, t_start=0, channel="inflow", seed=0):
    rng = np.random.default_rng(seed)
    return UrbanImageTimeSeries(RegionGrid(w, h), t_start,
                                rng.uniform(0, 50, size=(t_count, w, h)),
                                channel)


def make_dataset(t_count=6, w=2, h=2, aux_count=12, seed=0):
    grid = RegionGrid(w, h)
    rng = np.random.default_rng(seed)
    service = {
        ch: UrbanImageTimeSeries(grid, 0,
                                 rng.uniform(0, 50, size=(t_count, w, h)), ch)
        for ch in ("inflow", "outflow")
    }
    aux = UrbanImageTimeSeries(grid, 0,
                               rng.uniform(0, 9, size=(aux_count, w, h)),
                               "aux")
    ext = rng.normal(size=(t_count, 3))
    return CityDataset("testville", service, aux=aux, ext=ext,
                       stats=NormStats.from_series(service))


class TestNormalize:
    def test_midpoint(self):
        s = make_series()
        s.frames[0, 0, 0] = 25.0
        stats = NormStats(lo={"inflow": 0.0}, hi={"inflow": 50.0})
        assert normalize(s, stats).frames[0, 0, 0] == 0.5

    def test_hand_case(self):
        grid = RegionGrid(1, 1)
        s = UrbanImageTimeSeries(grid, 0,
                                 np.array([2.0, 4.0, 10.0]).reshape(3, 1, 1),
                                 "inflow")
        stats = NormStats(lo={"inflow": 2.0}, hi={"inflow": 10.0})
        out = normalize(s, stats).frames[:, 0, 0]
        assert out.tolist() == [0.0, 0.25, 1.0]

    def test_constant_channel_rejected(self):
        s = make_series(channel="outflow")
        stats = NormStats(lo={"outflow": 5.0}, hi={"outflow": 5.0})
        with pytest.raises(DataError, match="outflow"):
            normalize(s, stats)

    @given(st.floats(0.1, 1e6), st.floats(-1e6, 1e6))
    def test_round_trip(self, span, lo):
        s = make_series(seed=3)
        stats = NormStats(lo={"inflow": lo}, hi={"inflow": lo + span})
        back = denormalize(normalize(s, stats), stats)
        assert np.allclose(back.frames, s.frames, atol=1e-12 * max(1, abs(lo)))


class TestWindow:
    def test_k1_first_window(self):
        s = make_series(t_count=3)
        x, y = window(s, 1, 0)
        assert np.array_equal(x[0], s.frames[0])
        assert np.array_equal(y, s.frames[1])

    def test_boundary_k_equals_t_minus_1(self):
        s = make_series(t_count=5)
        ts = window_timestamps(s, 4)
        assert len(ts) == 1
        window(s, 4, ts[0])

    def test_window_count_enumeration(self):
        # enumeration oracle: k=3, 10 frames -> t in 2..8, 7 pairs
        s = make_series(t_count=10)
        ts = window_timestamps(s, 3)
        assert ts == list(range(2, 9))
        for t in ts:
            window(s, 3, t)

    def test_out_of_range_rejected(self):
        s = make_series(t_count=5)
        with pytest.raises(DataError):
            window(s, 3, 1)
        with pytest.raises(DataError):
            window(s, 3, 4)

    @given(st.integers(2, 12), st.integers(1, 14))
    def test_count_is_t_minus_k(self, t_count, k):
        s = make_series(t_count=t_count)
        assert len(window_timestamps(s, k)) == max(0, t_count - k)


class TestTensorFile:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        a = rng.normal(size=(3, 4, 2))
        write_tensor(tmp_path / "t.uits", a)
        b = read_tensor(tmp_path / "t.uits")
        assert a.tobytes() == b.tobytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.uits").write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(DataError, match="magic"):
            read_tensor(tmp_path / "bad.uits")

    def test_truncated(self, tmp_path, rng):
        write_tensor(tmp_path / "t.uits", rng.normal(size=(4, 4)))
        raw = (tmp_path / "t.uits").read_bytes()
        (tmp_path / "t.uits").write_bytes(raw[:-8])
        with pytest.raises(DataError, match="payload"):
            read_tensor(tmp_path / "t.uits")


class TestDatasetIO:
    def test_save_load_equal(self, tmp_path):
        ds = make_dataset()
        save_dataset(ds, tmp_path / "city")
        back = load_dataset(tmp_path / "city")
        assert back.name == ds.name
        for ch in ds.channels():
            assert np.array_equal(back.service[ch].frames,
                                  ds.service[ch].frames)
        assert np.array_equal(back.aux.frames, ds.aux.frames)
        assert np.array_equal(back.ext, ds.ext)
        assert back.stats.lo == ds.stats.lo

    def test_save_load_save_byte_identical(self, tmp_path):
        ds = make_dataset(seed=7)
        save_dataset(ds, tmp_path / "a")
        save_dataset(load_dataset(tmp_path / "a"), tmp_path / "b")
        for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / f).read_bytes() == \
                (tmp_path / "b" / f).read_bytes()

    def test_dimension_mismatch_detected(self, tmp_path):
        ds = make_dataset()
        save_dataset(ds, tmp_path / "city")
        write_tensor(tmp_path / "city" / "inflow.uits",
                     np.zeros((ds.t_count, 1, 1)))
        with pytest.raises(DataError, match="disagree"):
            load_dataset(tmp_path / "city")

    def test_empty_range_rejected(self, tmp_path):
        ds = make_dataset()
        save_dataset(ds, tmp_path / "city")
        man = (tmp_path / "city" / "manifest").read_text()
        man = man.replace(f"t_count: {ds.t_count}", "t_count: 0")
        (tmp_path / "city" / "manifest").write_text(man)
        with pytest.raises(DataError, match="empty"):
            load_dataset(tmp_path / "city")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            load_dataset(tmp_path / "nowhere")


class TestGridAndDataset:
    def test_linear_index_bijective(self):
        grid = RegionGrid(3, 4)
        idx = [grid.linear_index(i, j) for (i, j) in grid.coords()]
        assert idx == list(range(12))

    def test_aux_shorter_than_service_rejected(self):
        ds = make_dataset()
        with pytest.raises(DataError, match="shorter"):
            CityDataset("x", ds.service,
                        aux=UrbanImageTimeSeries(ds.grid, 0,
                                                 np.zeros((2, 2, 2)), "aux"))

    def test_sliced_view(self):
        ds = make_dataset(t_count=6)
        part = ds.sliced(2, 3)
        assert part.t_start == 2 and part.t_count == 3
        assert np.array_equal(part.service["inflow"].frames,
                              ds.service["inflow"].frames[2:5])
        assert np.array_equal(part.ext, ds.ext[2:5])


class TestCsvIngestion:
    def test_parse(self):
        lines = ["timestamp,i,j,value", "5,0,0,1.5", "6,1,0,2.5", "5,1,0,3.0"]
        t0, frames = frames_from_csv(lines, RegionGrid(2, 1))
        assert t0 == 5
        assert frames.shape == (2, 2, 1)
        assert frames[0, 1, 0] == 3.0
        assert frames[1, 1, 0] == 2.5

    def test_region_out_of_grid(self):
        with pytest.raises(DataError, match="outside"):
            frames_from_csv(["0,5,0,1.0"], RegionGrid(2, 2))

    def test_malformed_row(self):
        with pytest.raises(DataError, match="line 1"):
            frames_from_csv(["0,0,abc"], RegionGrid(2, 2))
