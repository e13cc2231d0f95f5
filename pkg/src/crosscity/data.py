"""City grid data model, normalization, and on-disk formats.

A city dataset is a directory:

    manifest                plain-text ``key: value`` lines
    <channel>.uits          one binary tensor file per service channel
    aux.uits                optional auxiliary series
    ext.uits                optional [T, L_e] external feature matrix

Tensor file layout (bit-exact): magic ``UITS``, version byte 0x01,
u32-LE rank, rank u32-LE dims, then row-major f64-LE values.
"""

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MAGIC = b"UITS"
VERSION = 1

SERVICE_CHANNELS = ("inflow", "outflow")


@dataclass(frozen=True)
class RegionGrid:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DataError(f"grid must be at least 1x1, got "
                            f"{self.width}x{self.height}")

    @property
    def n_regions(self):
        return self.width * self.height

    def linear_index(self, i, j):
        return j * self.width + i

    def coords(self):
        """All (i, j) pairs in linear-index order (j-major)."""
        return [(i, j) for j in range(self.height) for i in range(self.width)]


@dataclass
class UrbanImageTimeSeries:
    """Stack of W x H frames over a contiguous integer timestamp range."""

    grid: RegionGrid
    t_start: int
    frames: np.ndarray  # [T, W, H]
    channel: str = "service"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise DataError(f"frames must be rank 3, got {self.frames.ndim}")
        if self.frames.shape[1:] != (self.grid.width, self.grid.height):
            raise DataError(
                f"frame size {self.frames.shape[1:]} does not match grid "
                f"{self.grid.width}x{self.grid.height}")
        if self.frames.shape[0] < 1:
            raise DataError("empty timestamp range")

    @property
    def t_count(self):
        return self.frames.shape[0]

    @property
    def t_end(self):
        """Last timestamp (inclusive)."""
        return self.t_start + self.t_count - 1

    def frame_at(self, t):
        if not self.t_start <= t <= self.t_end:
            raise DataError(f"timestamp {t} outside "
                            f"[{self.t_start}, {self.t_end}]")
        return self.frames[t - self.t_start]

    def region_series(self, i, j):
        return self.frames[:, i, j]


@dataclass
class NormStats:
    """Per-channel min/max in raw units."""

    lo: dict = field(default_factory=dict)
    hi: dict = field(default_factory=dict)

    @classmethod
    def from_series(cls, series_by_channel):
        stats = cls()
        for ch, s in series_by_channel.items():
            stats.lo[ch] = float(s.frames.min())
            stats.hi[ch] = float(s.frames.max())
        return stats

    def span(self, channel):
        lo, hi = self.lo[channel], self.hi[channel]
        if not hi > lo:
            raise DataError(f"channel '{channel}' is constant "
                            f"(min == max == {lo}); cannot normalize")
        return lo, hi


def normalize(series, stats):
    """Map values to [0,1] by (x - min) / (max - min)."""
    lo, hi = stats.span(series.channel)
    return UrbanImageTimeSeries(series.grid, series.t_start,
                                (series.frames - lo) / (hi - lo),
                                series.channel)


def denormalize(series, stats):
    lo, hi = stats.span(series.channel)
    return UrbanImageTimeSeries(series.grid, series.t_start,
                                series.frames * (hi - lo) + lo,
                                series.channel)


def denormalize_values(values, stats, channel):
    """Same mapping as ``denormalize`` for a bare array."""
    lo, hi = stats.span(channel)
    return np.asarray(values) * (hi - lo) + lo


def window(series, k, t):
    """Input/target pair at timestamp t: X = frames t-k+1..t, Y = frame t+1."""
    if k < 1:
        raise DataError(f"window length must be >= 1, got {k}")
    if t - k + 1 < series.t_start or t + 1 > series.t_end:
        raise DataError(
            f"window [{t - k + 1}, {t + 1}] outside series range "
            f"[{series.t_start}, {series.t_end}]")
    a = t - k + 1 - series.t_start
    x = series.frames[a:a + k]
    y = series.frames[a + k]
    return x, y


def window_timestamps(series, k):
    """All t for which (X_t, Y_t) is valid; count is T - k."""
    return list(range(series.t_start + k - 1, series.t_end))


@dataclass
class CityDataset:
    name: str
    service: dict  # channel -> UrbanImageTimeSeries
    aux: UrbanImageTimeSeries | None = None
    ext: np.ndarray | None = None  # [T, L_e], aligned with service timestamps
    stats: NormStats = field(default_factory=NormStats)

    def __post_init__(self):
        grids = {(s.grid.width, s.grid.height) for s in self.service.values()}
        starts = {(s.t_start, s.t_count) for s in self.service.values()}
        if len(grids) > 1 or len(starts) > 1:
            raise DataError("service channels disagree on grid or timestamps")
        if self.aux is not None:
            first = next(iter(self.service.values()))
            if self.aux.t_count < first.t_count:
                raise DataError(
                    f"auxiliary range ({self.aux.t_count}) shorter than "
                    f"service range ({first.t_count})")
        if self.ext is not None:
            self.ext = np.asarray(self.ext, dtype=np.float64)
            first = next(iter(self.service.values()))
            if self.ext.ndim != 2 or self.ext.shape[0] != first.t_count:
                raise DataError(
                    f"external features shape {self.ext.shape} does not "
                    f"cover {first.t_count} timestamps")

    @property
    def grid(self):
        return next(iter(self.service.values())).grid

    @property
    def t_start(self):
        return next(iter(self.service.values())).t_start

    @property
    def t_count(self):
        return next(iter(self.service.values())).t_count

    @property
    def ext_len(self):
        return 0 if self.ext is None else self.ext.shape[1]

    def channels(self):
        return list(self.service.keys())

    def ext_at(self, t):
        if self.ext is None:
            return np.zeros(0)
        return self.ext[t - self.t_start]

    def sliced(self, t_start, t_count):
        """View of the dataset restricted to [t_start, t_start + t_count)."""
        a = t_start - self.t_start
        if a < 0 or a + t_count > self.t_count:
            raise DataError(f"slice [{t_start}, +{t_count}) outside dataset "
                            f"range [{self.t_start}, +{self.t_count})")
        service = {
            ch: UrbanImageTimeSeries(s.grid, t_start,
                                     s.frames[a:a + t_count], ch)
            for ch, s in self.service.items()
        }
        ext = None if self.ext is None else self.ext[a:a + t_count]
        return CityDataset(self.name, service, aux=self.aux, ext=ext,
                           stats=self.stats)


# ---- binary tensor files ------------------------------------------------

def write_tensor(path, array):
    array = np.asarray(array, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([VERSION]))
        f.write(struct.pack("<I", array.ndim))
        for d in array.shape:
            f.write(struct.pack("<I", d))
        f.write(array.astype("<f8").tobytes(order="C"))


def read_tensor(path):
    with open(path, "rb") as f:
        raw = f.read()
    buf = io.BytesIO(raw)
    if buf.read(4) != MAGIC:
        raise DataError(f"{path}: bad magic bytes")
    version = buf.read(1)
    if len(version) != 1 or version[0] != VERSION:
        raise DataError(f"{path}: unsupported version {version!r}")
    head = buf.read(4)
    if len(head) != 4:
        raise DataError(f"{path}: truncated header")
    rank = struct.unpack("<I", head)[0]
    if rank > 8:
        raise DataError(f"{path}: implausible rank {rank}")
    dims = []
    for _ in range(rank):
        d = buf.read(4)
        if len(d) != 4:
            raise DataError(f"{path}: truncated dims")
        dims.append(struct.unpack("<I", d)[0])
    n = int(np.prod(dims)) if dims else 1
    payload = buf.read()
    if len(payload) != 8 * n:
        raise DataError(f"{path}: expected {8 * n} payload bytes, "
                        f"got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


# ---- dataset directories ------------------------------------------------

def _write_manifest(path, entries):
    with open(path, "w") as f:
        for key, value in entries:
            f.write(f"{key}: {value}\n")


def _read_manifest(path):
    entries = {}
    try:
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                if ":" not in line:
                    raise DataError(f"{path}: malformed line {line!r}")
                key, value = line.split(":", 1)
                entries[key.strip()] = value.strip()
    except FileNotFoundError:
        raise DataError(f"{path}: manifest not found") from None
    return entries


def save_dataset(dataset, path):
    path.mkdir(parents=True, exist_ok=True)
    channels = dataset.channels()
    entries = [
        ("city", dataset.name),
        ("width", dataset.grid.width),
        ("height", dataset.grid.height),
        ("t_start", dataset.t_start),
        ("t_count", dataset.t_count),
        ("channels", ",".join(channels)),
        ("aux_present", 1 if dataset.aux is not None else 0),
        ("ext_len", dataset.ext_len),
    ]
    if dataset.aux is not None:
        entries += [("aux_t_start", dataset.aux.t_start),
                    ("aux_t_count", dataset.aux.t_count)]
    for ch in channels:
        if ch in dataset.stats.lo:
            entries += [(f"norm_min.{ch}", repr(dataset.stats.lo[ch])),
                        (f"norm_max.{ch}", repr(dataset.stats.hi[ch]))]
    _write_manifest(path / "manifest", entries)
    for ch in channels:
        write_tensor(path / f"{ch}.uits", dataset.service[ch].frames)
    if dataset.aux is not None:
        write_tensor(path / "aux.uits", dataset.aux.frames)
    if dataset.ext is not None:
        write_tensor(path / "ext.uits", dataset.ext)


def load_dataset(path):
    man = _read_manifest(path / "manifest")
    try:
        width = int(man["width"])
        height = int(man["height"])
        t_start = int(man["t_start"])
        t_count = int(man["t_count"])
        channels = [c for c in man["channels"].split(",") if c]
        aux_present = int(man["aux_present"])
        ext_len = int(man["ext_len"])
    except KeyError as e:
        raise DataError(f"{path}: manifest missing key {e}") from None
    except ValueError as e:
        raise DataError(f"{path}: malformed manifest value ({e})") from None
    if t_count < 1:
        raise DataError(f"{path}: empty timestamp range")
    grid = RegionGrid(width, height)
    service = {}
    for ch in channels:
        frames = read_tensor(path / f"{ch}.uits")
        if frames.shape != (t_count, width, height):
            raise DataError(
                f"{path}/{ch}.uits: dimensions {frames.shape} disagree with "
                f"manifest ({t_count}, {width}, {height})")
        service[ch] = UrbanImageTimeSeries(grid, t_start, frames, ch)
    aux = None
    if aux_present:
        frames = read_tensor(path / "aux.uits")
        aux_t_start = int(man["aux_t_start"])
        aux_t_count = int(man["aux_t_count"])
        if frames.shape != (aux_t_count, width, height):
            raise DataError(
                f"{path}/aux.uits: dimensions {frames.shape} disagree with "
                f"manifest ({aux_t_count}, {width}, {height})")
        aux = UrbanImageTimeSeries(grid, aux_t_start, frames, "aux")
    ext = None
    if ext_len:
        ext = read_tensor(path / "ext.uits")
        if ext.shape != (t_count, ext_len):
            raise DataError(
                f"{path}/ext.uits: shape {ext.shape} disagrees with manifest "
                f"({t_count}, {ext_len})")
    stats = NormStats()
    for ch in channels:
        if f"norm_min.{ch}" in man:
            stats.lo[ch] = float(man[f"norm_min.{ch}"])
            stats.hi[ch] = float(man[f"norm_max.{ch}"])
    return CityDataset(man.get("city", "unnamed"), service, aux=aux, ext=ext,
                       stats=stats)


def frames_from_csv(lines, grid):
    """Parse ``timestamp,i,j,value`` rows into (t_start, frames [T,W,H])."""
    records = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("timestamp"):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"csv line {lineno}: expected 4 fields, "
                            f"got {len(parts)}")
        try:
            t, i, j = int(parts[0]), int(parts[1]), int(parts[2])
            v = float(parts[3])
        except ValueError:
            raise DataError(f"csv line {lineno}: malformed values") from None
        if not (0 <= i < grid.width and 0 <= j < grid.height):
            raise DataError(f"csv line {lineno}: region ({i},{j}) outside "
                            f"{grid.width}x{grid.height} grid")
        records.append((t, i, j, v))
    if not records:
        raise DataError("csv contains no data rows")
    t_lo = min(r[0] for r in records)
    t_hi = max(r[0] for r in records)
    frames = np.zeros((t_hi - t_lo + 1, grid.width, grid.height))
    for t, i, j, v in records:
        frames[t - t_lo, i, j] = v
    return t_lo, frames
