"""Inter-city similar-region matching by Pearson correlation.

Every target region is matched to the single source region whose value
series correlates most strongly with it, with ties broken by the lowest
source linear index (j * W + i). Zero-variance series correlate 0 with
everything by convention, which demotes them in both the argmax and the
transfer-loss weighting.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def pearson(x, y):
    """Pearson correlation coefficient; 0 for zero-variance inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson: incompatible shapes {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError(f"pearson: need at least 2 points, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    nx = np.sqrt((dx * dx).sum())
    ny = np.sqrt((dy * dy).sum())
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float((dx * dy).sum() / (nx * ny))


@dataclass
class MatchEntry:
    source: tuple  # (i, j) in the source grid
    rho: float


@dataclass
class RegionMatching:
    """Total map from target regions to their most-correlated source region."""

    entries: dict  # (i, j) target -> MatchEntry
    provenance: str = "service"  # "service" | "aux"

    def source_of(self, region):
        if region not in self.entries:
            raise DataError(f"no match recorded for target region {region}")
        return self.entries[region].source

    def rho_of(self, region):
        return self.entries[region].rho

    def weight_of(self, region):
        """Transfer-loss weight: rho clamped to [0, 1]."""
        return max(0.0, min(1.0, self.entries[region].rho))

    def save(self, path):
        with open(path, "w") as f:
            f.write(f"# provenance: {self.provenance}\n")
            for (ti, tj), e in sorted(self.entries.items(),
                                      key=lambda kv: (kv[0][1], kv[0][0])):
                f.write(f"{ti},{tj} -> {e.source[0]},{e.source[1]} "
                        f"rho={e.rho!r}\n")

    @classmethod
    def load(cls, path):
        entries = {}
        provenance = "service"
        try:
            with open(path) as f:
                lines = f.readlines()
        except FileNotFoundError:
            raise DataError(f"{path}: matching file not found") from None
        for line in lines:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "provenance:" in line:
                    provenance = line.split("provenance:", 1)[1].strip()
                continue
            try:
                left, rest = line.split("->")
                src, rho_part = rest.split("rho=")
                ti, tj = (int(v) for v in left.strip().split(","))
                si, sj = (int(v) for v in src.strip().split(","))
                rho = float(rho_part)
            except ValueError:
                raise DataError(f"{path}: malformed line {line!r}") from None
            entries[(ti, tj)] = MatchEntry((si, sj), rho)
        if not entries:
            raise DataError(f"{path}: no matching entries")
        return cls(entries, provenance)


def _correlation_argmax(target_rows, source_rows):
    """For each target row, the argmax-correlation source row index and rho.

    Rows are per-region series in linear-index order. Vectorized Pearson
    with the zero-variance -> 0 convention.
    """
    def standardized(rows):
        d = rows - rows.mean(axis=1, keepdims=True)
        norm = np.sqrt((d * d).sum(axis=1, keepdims=True))
        ok = norm[:, 0] > 0.0
        d = np.divide(d, norm, out=np.zeros_like(d), where=norm > 0.0)
        return d, ok

    td, _ = standardized(np.asarray(target_rows, dtype=np.float64))
    sd, _ = standardized(np.asarray(source_rows, dtype=np.float64))
    corr = td @ sd.T  # [n_target, n_source]; zero rows give all-zero corr
    best = corr.argmax(axis=1)  # ties break to the lowest linear index
    rho = corr[np.arange(corr.shape[0]), best]
    return best, rho


def _region_rows(dataset, t_start, t_count, use_aux):
    """Per-region series matrix in linear-index order.

    Service mode concatenates all channels per region; aux mode uses the
    auxiliary series alone.
    """
    grid = dataset.grid
    coords = grid.coords()
    if use_aux:
        if dataset.aux is None:
            raise DataError(f"city '{dataset.name}' has no auxiliary data")
        sources = [dataset.aux]
        base = dataset.aux.t_start
    else:
        sources = [dataset.service[ch] for ch in dataset.channels()]
        base = dataset.t_start
    a = t_start - base
    rows = np.empty((len(coords), t_count * len(sources)))
    for n, (i, j) in enumerate(coords):
        rows[n] = np.concatenate(
            [s.frames[a:a + t_count, i, j] for s in sources])
    return coords, rows


def _match(target, source, t_start, t_count, use_aux, provenance):
    tcoords, trows = _region_rows(target, t_start, t_count, use_aux)
    scoords, srows = _region_rows(source, t_start, t_count, use_aux)
    best, rho = _correlation_argmax(trows, srows)
    entries = {
        tc: MatchEntry(scoords[b], float(r))
        for tc, b, r in zip(tcoords, best, rho)
    }
    return RegionMatching(entries, provenance)


def match_service(target, source):
    """Match over the target's full service window (both cities' data)."""
    t0, n = target.t_start, target.t_count
    if source.t_start > t0 or source.t_start + source.t_count < t0 + n:
        raise DataError(
            f"source service range [{source.t_start}, "
            f"+{source.t_count}) does not cover target range [{t0}, +{n})")
    if set(target.channels()) != set(source.channels()):
        raise DataError("service channel sets differ between cities")
    return _match(target, source, t0, n, use_aux=False, provenance="service")


def match_auxiliary(target, source):
    """Match over the shared auxiliary range of both cities."""
    if target.aux is None or source.aux is None:
        missing = target.name if target.aux is None else source.name
        raise DataError(f"auxiliary data absent in city '{missing}'")
    t0 = max(target.aux.t_start, source.aux.t_start)
    t1 = min(target.aux.t_end, source.aux.t_end)
    if t1 - t0 + 1 < target.t_count:
        raise DataError(
            f"shared auxiliary range [{t0}, {t1}] shorter than the service "
            f"range ({target.t_count})")
    return _match(target, source, t0, t1 - t0 + 1, use_aux=True,
                  provenance="aux")


def verify_argmax(matching, target, source):
    """Recompute all correlations and confirm each match attains the max."""
    use_aux = matching.provenance == "aux"
    if use_aux:
        t0 = max(target.aux.t_start, source.aux.t_start)
        n = min(target.aux.t_end, source.aux.t_end) - t0 + 1
    else:
        t0, n = target.t_start, target.t_count
    tcoords, trows = _region_rows(target, t0, n, use_aux)
    scoords, srows = _region_rows(source, t0, n, use_aux)
    sindex = {c: k for k, c in enumerate(scoords)}
    for tc, trow in zip(tcoords, trows):
        rhos = np.array([pearson(trow, srow) for srow in srows])
        claimed = matching.rho_of(tc)
        if claimed < rhos.max() - 1e-9:
            return False
        if abs(rhos[sindex[matching.source_of(tc)]] - claimed) > 1e-9:
            return False
    return True
