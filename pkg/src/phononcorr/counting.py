"""Monte-Carlo click data and coincidence-histogram analysis.

Channel 0 is the start detector (Stokes, S), channel 1 the stop detector
(anti-Stokes, aS). Each detector clicks at most once per repetition and a
click is time-stamped at the start of its repetition.

Repetitions are generated in fixed blocks. Block ``b`` draws from its own
generator seeded with ``SeedSequence(seed, spawn_key=(b,))``, so results do not
depend on chunking for I/O or on the number of worker processes.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import _backend
from .analytic import AnalyticParams, antistokes_click_prob, coincidence_prob, stokes_click_prob

REP_PERIOD_NS = 12.5
ACQUISITION_BIN_NS = 0.512
ANALYSIS_BIN_NS = 1.536
N_SIDE_PEAKS = 25
BLOCK_REPS = 1 << 24
RNG_ALGORITHM = "numpy PCG64, SeedSequence(seed, spawn_key=(block,)), block=2^24 repetitions"


class CountingError(ValueError):
    """Invalid click model, event stream or histogram."""


@dataclass(frozen=True)
class ClickModel:
    p_s: float
    p_as: float
    p_joint: float
    n_reps: int
    rep_period_ns: float = REP_PERIOD_NS
    seed: int = 0

    def __post_init__(self):
        for name in ("p_s", "p_as", "p_joint"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0 or not math.isfinite(v):
                raise CountingError(f"{name} must lie in [0, 1], got {v}")
        lo = max(0.0, self.p_s + self.p_as - 1.0)
        hi = min(self.p_s, self.p_as)
        # tolerate rounding from the analytic model
        if not lo - 1e-15 <= self.p_joint <= hi + 1e-15:
            raise CountingError(
                f"infeasible click probabilities: p_joint={self.p_joint} outside [{lo}, {hi}]")
        if int(self.n_reps) != self.n_reps or self.n_reps < 1:
            raise CountingError(f"n_reps must be a positive integer, got {self.n_reps}")
        if self.rep_period_ns <= 0:
            raise CountingError("rep_period_ns must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise CountingError(f"seed must be a non-negative integer, got {self.seed}")

    @property
    def p_active(self) -> float:
        """Probability that at least one detector clicks."""
        return min(1.0, self.p_s + self.p_as - self.p_joint)

    @property
    def expected_g2(self) -> float:
        if self.p_s == 0 or self.p_as == 0:
            raise ZeroDivisionError("a channel never clicks")
        return self.p_joint / (self.p_s * self.p_as)

    @property
    def n_blocks(self) -> int:
        return -(-int(self.n_reps) // BLOCK_REPS)

    def with_(self, **changes) -> "ClickModel":
        from dataclasses import replace
        return replace(self, **changes)


def click_model_from_analytic(params: AnalyticParams, n_reps: int, seed: int = 0,
                              rep_period_ns: float = REP_PERIOD_NS) -> ClickModel:
    """Per-repetition click probabilities of the threshold-detector model."""
    p_s = stokes_click_prob(params)
    p_as = antistokes_click_prob(params)
    p_joint = min(coincidence_prob(params), p_s, p_as)
    return ClickModel(p_s, p_as, p_joint, int(n_reps), rep_period_ns, seed)


# --- event generation -----------------------------------------------------------

def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _block_events(model: ClickModel, block: int) -> tuple[np.ndarray, np.ndarray]:
    """Repetition indices (global, sorted) of S and aS clicks in one block."""
    first = block * BLOCK_REPS
    n = min(BLOCK_REPS, int(model.n_reps) - first)
    pa = model.p_active
    if n <= 0 or pa == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    rng = _block_rng(model.seed, block)
    if pa >= 0.05:
        active = np.flatnonzero(rng.random(n) < pa)
    else:
        # Bernoulli process via geometric gaps; cost scales with the click count
        chunks, pos = [], -1
        while pos < n - 1:
            m = int(n * pa + 6 * math.sqrt(n * pa) + 16)
            p = pos + np.cumsum(rng.geometric(pa, m))
            chunks.append(p)
            pos = int(p[-1])
        active = np.concatenate(chunks)
        active = active[active < n]
    u = rng.random(active.size) * pa
    s_mask = u < model.p_s
    # joint clicks occupy [0, p_joint), aS-only clicks occupy [p_s, p_active)
    as_mask = (u < model.p_joint) | (u >= model.p_s)
    active = active.astype(np.int64) + first
    return active[s_mask], active[as_mask]


def iter_click_blocks(model: ClickModel, start_block: int = 0,
                      stop_block: int | None = None) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield ``(block, s_reps, as_reps)`` without materializing the whole run."""
    stop = model.n_blocks if stop_block is None else min(stop_block, model.n_blocks)
    for b in range(max(0, start_block), stop):
        s, a = _block_events(model, b)
        yield b, s, a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Click records sorted by repetition, S before aS within a repetition."""
    rep_index: np.ndarray
    channel: np.ndarray
    rep_period_ns: float = REP_PERIOD_NS
    n_reps: int | None = None
    seed: int | None = None
    rng: str = RNG_ALGORITHM

    def __post_init__(self):
        rep = np.asarray(self.rep_index, dtype=np.int64)
        ch = np.asarray(self.channel, dtype=np.int8)
        if rep.shape != ch.shape or rep.ndim != 1:
            raise CountingError("rep_index and channel must be 1-d arrays of equal length")
        if ch.size and not np.isin(ch, (0, 1)).all():
            raise CountingError("channel must be 0 (S) or 1 (aS)")
        key = rep * 2 + ch
        if key.size > 1 and np.any(np.diff(key) <= 0):
            raise CountingError("events must be sorted by repetition with one click per channel")
        object.__setattr__(self, "rep_index", rep)
        object.__setattr__(self, "channel", ch)

    def __len__(self):
        return self.rep_index.size

    @property
    def timestamps_ns(self) -> np.ndarray:
        return self.rep_index * self.rep_period_ns

    def channel_reps(self, channel: int) -> np.ndarray:
        return self.rep_index[self.channel == channel]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("rep_index,channel,timestamp_ns\n")
        for r, c, t in zip(self.rep_index, self.channel, self.timestamps_ns):
            buf.write(f"{r},{c},{float(t)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, rep_period_ns: float = REP_PERIOD_NS) -> "EventStream":
        lines = text.strip().splitlines()
        if not lines or lines[0].strip() != "rep_index,channel,timestamp_ns":
            raise CountingError("event CSV must start with 'rep_index,channel,timestamp_ns'")
        reps, chans = [], []
        for n, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != 3:
                raise CountingError(f"line {n}: expected 3 fields, got {len(parts)}")
            try:
                reps.append(int(parts[0]))
                chans.append(int(parts[1]))
                float(parts[2])
            except ValueError as exc:
                raise CountingError(f"line {n}: {exc}") from None
        return cls(np.array(reps, dtype=np.int64), np.array(chans, dtype=np.int8), rep_period_ns)


def _merge_events(s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    reps = np.concatenate([s, a])
    chans = np.concatenate([np.zeros(s.size, np.int8), np.ones(a.size, np.int8)])
    order = np.argsort(reps * 2 + chans, kind="stable")
    return reps[order], chans[order]


def simulate_clicks(model: ClickModel) -> EventStream:
    """Draw the click record of every repetition.

    Each repetition independently ends in one of four outcomes (both, S only,
    aS only, neither) with probabilities fixed by ``(p_s, p_as, p_joint)``.
    Only repetitions with a click are stored.
    """
    s_parts, a_parts = [], []
    for _, s, a in iter_click_blocks(model):
        s_parts.append(s)
        a_parts.append(a)
    s = np.concatenate(s_parts) if s_parts else np.empty(0, np.int64)
    a = np.concatenate(a_parts) if a_parts else np.empty(0, np.int64)
    reps, chans = _merge_events(s, a)
    return EventStream(reps, chans, model.rep_period_ns, int(model.n_reps), model.seed)


# --- histograms -----------------------------------------------------------------

def _half_bins(bin_width: float, rep_period: float, n_periods: int, margin: float) -> int:
    return int(math.ceil((n_periods * rep_period + margin) / bin_width))


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """Start-stop delay counts in bins centred on ``k * bin_width``."""
    bin_width: float
    counts: np.ndarray
    rep_period: float = REP_PERIOD_NS
    total_starts: int = 0
    total_stops: int = 0
    n_reps: int = 0
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size % 2 != 1:
            raise CountingError("counts must be a 1-d array with an odd number of bins")
        if not np.issubdtype(c.dtype, np.integer):
            if np.any(c != np.round(c)):
                raise CountingError("counts must be integers")
        c = c.astype(np.int64)
        if np.any(c < 0):
            raise CountingError("counts must be non-negative")
        if not self.bin_width > 0:
            raise CountingError("bin_width must be positive")
        if self.rep_period <= 0:
            raise CountingError("rep_period must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def half_bins(self) -> int:
        return self.counts.size // 2

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.counts.size) - self.half_bins) * self.bin_width

    @property
    def bin_starts(self) -> np.ndarray:
        return self.centers - 0.5 * self.bin_width

    @property
    def positive_span(self) -> float:
        return (self.half_bins + 0.5) * self.bin_width

    def compatible(self, other: "CoincidenceHistogram") -> bool:
        return (self.counts.size == other.counts.size
                and math.isclose(self.bin_width, other.bin_width, rel_tol=1e-12)
                and math.isclose(self.rep_period, other.rep_period, rel_tol=1e-12))

    def __add__(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        if not self.compatible(other):
            raise CountingError("cannot merge histograms with different binning")
        return CoincidenceHistogram(
            self.bin_width, self.counts + other.counts, self.rep_period,
            self.total_starts + other.total_starts, self.total_stops + other.total_stops,
            self.n_reps + other.n_reps, self.seed, dict(self.metadata))

    def to_csv(self) -> str:
        buf = io.StringIO()
        header = {"bin_width_ns": repr(float(self.bin_width)),
                  "rep_period_ns": repr(float(self.rep_period)),
                  "n_reps": str(int(self.n_reps)),
                  "seed": "" if self.seed is None else str(int(self.seed)),
                  "total_starts": str(int(self.total_starts)),
                  "total_stops": str(int(self.total_stops))}
        for k, v in header.items():
            buf.write(f"# {k}={v}\n")
        for k, v in sorted(self.metadata.items()):
            buf.write(f"# meta.{k}={v}\n")
        buf.write("bin_start_ns,count\n")
        for s, c in zip(self.bin_starts, self.counts):
            buf.write(f"{float(s)!r},{c}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CoincidenceHistogram":
        header, meta, rows = {}, {}, []
        seen_columns = False
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise CountingError(f"line {n}: header lines must be '# key=value'")
                if key.startswith("meta."):
                    meta[key[5:]] = value
                else:
                    header[key] = value
                continue
            if not seen_columns:
                if line != "bin_start_ns,count":
                    raise CountingError(f"line {n}: expected column header 'bin_start_ns,count'")
                seen_columns = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise CountingError(f"line {n}: expected 2 fields")
            try:
                rows.append((float(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise CountingError(f"line {n}: {exc}") from None
        for key in ("bin_width_ns", "rep_period_ns", "n_reps"):
            if key not in header:
                raise CountingError(f"missing header line '# {key}=...'")
        if not rows:
            raise CountingError("histogram has no bins")
        try:
            bw = float(header["bin_width_ns"])
            hist = cls(bw, np.array([c for _, c in rows], dtype=np.int64),
                       float(header["rep_period_ns"]),
                       int(header.get("total_starts", 0)), int(header.get("total_stops", 0)),
                       int(header["n_reps"]),
                       int(header["seed"]) if header.get("seed", "") != "" else None, meta)
        except ValueError as exc:
            raise CountingError(str(exc)) from None
        if not np.allclose([s for s, _ in rows], hist.bin_starts, rtol=0, atol=1e-9 * bw + 1e-12):
            raise CountingError("bin_start_ns column is inconsistent with bin_width_ns")
        return hist


def _pair_counts(starts_ns: np.ndarray, stops_ns: np.ndarray, bin_width: float,
                 half_bins: int) -> np.ndarray:
    counts = np.zeros(2 * half_bins + 1, dtype=np.int64)
    if starts_ns.size and stops_ns.size:
        _backend.pair_histogram(np.ascontiguousarray(starts_ns, dtype=np.float64),
                                np.ascontiguousarray(stops_ns, dtype=np.float64),
                                float(bin_width), int(half_bins), counts)
    return counts


def build_histogram(events: EventStream, bin_width: float = ACQUISITION_BIN_NS,
                    n_periods: int = N_SIDE_PEAKS + 1,
                    margin_ns: float = ANALYSIS_BIN_NS) -> CoincidenceHistogram:
    """Histogram every start-stop delay within ``n_periods`` periods (+ margin)."""
    if len(events) == 0:
        raise CountingError("empty event stream")
    if bin_width <= 0:
        raise CountingError("bin_width must be positive")
    if n_periods < N_SIDE_PEAKS + 1:
        raise CountingError(f"span must cover at least {N_SIDE_PEAKS + 1} repetition periods")
    hb = _half_bins(bin_width, events.rep_period_ns, n_periods, margin_ns)
    s = events.channel_reps(0)
    a = events.channel_reps(1)
    counts = _pair_counts(s * events.rep_period_ns, a * events.rep_period_ns, bin_width, hb)
    n_reps = events.n_reps if events.n_reps is not None else int(events.rep_index.max()) + 1
    return CoincidenceHistogram(bin_width, counts, events.rep_period_ns, int(s.size), int(a.size),
                                n_reps, events.seed, {"rng": events.rng})


def _segment_histogram(args) -> tuple[np.ndarray, int, int]:
    model, first, last, bin_width, hb, reach = args
    # neighbours supply stops within reach of the segment edges
    blocks = {b: _block_events(model, b) for b in range(max(0, first - 1), min(model.n_blocks, last + 2))}
    counts = np.zeros(2 * hb + 1, dtype=np.int64)
    n_s = n_a = 0
    for b in range(first, last + 1):
        s, _ = blocks[b]
        a_parts = []
        for nb in (b - 1, b, b + 1):
            if nb in blocks:
                a = blocks[nb][1]
                lo, hi = b * BLOCK_REPS - reach, (b + 1) * BLOCK_REPS + reach
                a_parts.append(a[(a >= lo) & (a < hi)])
        a = np.concatenate(a_parts)
        # times relative to the block origin keep float64 delays exact
        origin = b * BLOCK_REPS
        counts += _pair_counts((s - origin) * model.rep_period_ns,
                               (a - origin) * model.rep_period_ns, bin_width, hb)
        n_s += s.size
        n_a += blocks[b][1].size
    return counts, n_s, n_a


def simulate_histogram(model: ClickModel, bin_width: float = ACQUISITION_BIN_NS,
                       n_periods: int = N_SIDE_PEAKS + 1, margin_ns: float = ANALYSIS_BIN_NS,
                       workers: int = 1) -> CoincidenceHistogram:
    """Streaming ``build_histogram(simulate_clicks(model))``.

    Memory stays bounded by a few blocks, so runs of ~10^11 repetitions are
    feasible. Output is identical to the materialized path for any ``workers``.
    """
    if n_periods < N_SIDE_PEAKS + 1:
        raise CountingError(f"span must cover at least {N_SIDE_PEAKS + 1} repetition periods")
    hb = _half_bins(bin_width, model.rep_period_ns, n_periods, margin_ns)
    reach = int(math.ceil((hb + 1) * bin_width / model.rep_period_ns)) + 1
    if reach >= BLOCK_REPS:
        raise CountingError("histogram span exceeds the generation block")
    nb = model.n_blocks
    nseg = max(1, min(int(workers), nb)) if workers > 1 else 1
    edges = np.linspace(0, nb, nseg + 1).astype(int)
    jobs = [(model, int(edges[i]), int(edges[i + 1]) - 1, bin_width, hb, reach)
            for i in range(nseg) if edges[i + 1] > edges[i]]
    if len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=len(jobs)) as ex:
            parts = list(ex.map(_segment_histogram, jobs))
    else:
        parts = [_segment_histogram(j) for j in jobs]
    counts = sum(p[0] for p in parts)
    n_s = sum(p[1] for p in parts)
    n_a = sum(p[2] for p in parts)
    if n_s + n_a == 0:
        raise CountingError("simulation produced no clicks")
    return CoincidenceHistogram(bin_width, counts, model.rep_period_ns, n_s, n_a,
                                int(model.n_reps), model.seed, {"rng": RNG_ALGORITHM})


# --- analysis -------------------------------------------------------------------

@dataclass(frozen=True)
class G2Estimate:
    g2: float
    delta_g2: float
    central_area: float
    side_mean: float
    side_std: float
    side_areas: np.ndarray
    negative_side_areas: np.ndarray
    negative_g2: float
    background_per_bin: float = 0.0

    def as_dict(self) -> dict:
        return {"g2": self.g2, "delta_g2": self.delta_g2, "central_area": self.central_area,
                "side_mean": self.side_mean, "side_std": self.side_std,
                "negative_g2": self.negative_g2, "background_per_bin": self.background_per_bin}


def _peak_masks(hist: CoincidenceHistogram, analysis_bin: float, n: int):
    centers = hist.centers
    half = 0.5 * analysis_bin + 1e-9 * hist.bin_width
    return {m: np.abs(centers - m * hist.rep_period) <= half for m in range(-n, n + 1)}


def extract_g2(hist: CoincidenceHistogram, analysis_bin: float = ANALYSIS_BIN_NS,
               n_side_peaks: int = N_SIDE_PEAKS,
               dark_floor_subtraction: bool = False, side_error: str = "sem") -> G2Estimate:
    """Central-peak area over the mean of the first positive side peaks.

    Peak areas integrate the bins whose centres lie within ``analysis_bin / 2``
    of ``m * rep_period``. The same window is used for every peak. With
    ``dark_floor_subtraction`` a flat background, estimated from the bins
    outside all peak windows, is removed first. Negative-delay side peaks are
    reported separately and do not enter ``g2``.

    ``delta_g2 = g2 * sqrt((dA_SP / A_SP)^2 + 1 / A_CP)``. With
    ``side_error="sem"`` (default) ``dA_SP`` is the standard error of the mean
    side-peak area; ``"std"`` uses the plain standard deviation of the side
    peaks, which describes one peak rather than their mean and overstates the
    error by about ``sqrt(n_side_peaks)``.
    """
    if side_error not in ("sem", "std"):
        raise ValueError(f"side_error must be 'sem' or 'std', got {side_error!r}")
    if analysis_bin <= 0 or n_side_peaks < 2:
        raise CountingError("need analysis_bin > 0 and at least two side peaks")
    reach = n_side_peaks * hist.rep_period + 0.5 * analysis_bin
    if hist.positive_span < reach - 1e-9:
        raise CountingError(
            f"histogram spans {hist.positive_span:g} ns, {reach:g} ns needed for "
            f"{n_side_peaks} side peaks")
    masks = _peak_masks(hist, analysis_bin, n_side_peaks)
    if any(not m.any() for m in masks.values()):
        raise CountingError("analysis window narrower than one acquisition bin")
    counts = hist.counts.astype(float)
    floor = 0.0
    if dark_floor_subtraction:
        inside = np.zeros(counts.size, bool)
        for m in masks.values():
            inside |= m
        # only the span covered by the analysed peaks
        span = np.abs(hist.centers) <= reach
        outside = span & ~inside
        if not outside.any():
            raise CountingError("no off-peak bins to estimate the background")
        floor = float(counts[outside].mean())
    area = {m: float(counts[mask].sum() - floor * mask.sum()) for m, mask in masks.items()}
    side = np.array([area[m] for m in range(1, n_side_peaks + 1)])
    neg = np.array([area[-m] for m in range(1, n_side_peaks + 1)])
    mean = float(side.mean())
    if mean <= 0:
        raise ZeroDivisionError("side peaks are empty: g2 undefined")
    central = area[0]
    g2 = central / mean
    std = float(side.std(ddof=1))
    d_side = std / math.sqrt(side.size) if side_error == "sem" else std
    rel2 = (d_side / mean) ** 2 + (1.0 / central if central > 0 else 0.0)
    neg_mean = float(neg.mean())
    neg_g2 = central / neg_mean if neg_mean > 0 else math.nan
    return G2Estimate(g2, abs(g2) * math.sqrt(rel2), central, mean, std, side, neg, neg_g2, floor)


def subtract_crosstalk(hist_both: CoincidenceHistogram, hist_write_only: CoincidenceHistogram,
                       normalize: bool = False) -> CoincidenceHistogram:
    """Bin-wise ``both - write_only`` clamped at zero.

    With ``normalize`` the write-only counts are first rescaled to the
    repetition count of ``hist_both``.
    """
    if not hist_both.compatible(hist_write_only):
        raise CountingError("histograms have different binning")
    other = hist_write_only.counts.astype(float)
    scale = 1.0
    if normalize:
        if hist_write_only.n_reps <= 0 or hist_both.n_reps <= 0:
            raise CountingError("normalization needs n_reps on both histograms")
        scale = hist_both.n_reps / hist_write_only.n_reps
        other = other * scale
    elif hist_both.n_reps and hist_write_only.n_reps and hist_both.n_reps != hist_write_only.n_reps:
        raise CountingError("repetition counts differ; pass normalize=True")
    diff = np.clip(np.rint(hist_both.counts - other), 0, None).astype(np.int64)
    meta = dict(hist_both.metadata)
    meta["crosstalk_subtracted"] = "true"
    meta["crosstalk_scale"] = repr(scale)
    meta["crosstalk_counts_removed"] = str(int(hist_both.counts.sum() - diff.sum()))
    return CoincidenceHistogram(hist_both.bin_width, diff, hist_both.rep_period,
                                hist_both.total_starts, hist_both.total_stops,
                                hist_both.n_reps, hist_both.seed, meta)
