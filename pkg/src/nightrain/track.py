"""Temporal tracking: constant-velocity Kalman filtering, Hungarian
association, track lifecycle, and the per-frame decision logic.

State per track is [cx, cy, w, vx, vy, vw] (pair centroid, pair width, and
their per-frame velocities).  Prediction is x <- A x (no control input) and
P <- A P A^T + Q; the update is the standard gain/innovation correction with
the covariance symmetrised afterwards.  Pairs measure [cx, cy, w]; unpaired
single lights measure position only, so their width stays frozen and they
never satisfy the geometry test.

Association minimises total Euclidean distance between predicted positions
and detection centroids over a gate, solved exactly with a rectangular
Hungarian reduction (unmatched rows/columns are explicit options), with ties
resolved by ascending scan order, i.e. lowest (track, detection) indices
first.

A confirmed track is flagged "likely present" when any of: it is currently
matched to a pair satisfying the pairing constraints; its width trend over
the recent window slopes up by at least expand_min_slope px/frame; or its
mean classifier confidence clears conf_thresh.  Confirmed tracks with no
reason are "candidate".

The tracker is sequential per scene; distinct scenes can run in parallel.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ValidationError

VERDICT_LIKELY = "likely_present"
VERDICT_CANDIDATE = "candidate"
VERDICT_REJECTED = "rejected"  # reserved for schema completeness

REASON_GEOMETRY = "geometry_pass"
REASON_EXPANDING = "expanding"
REASON_CONFIDENCE = "high_confidence"

CONF_HISTORY_LEN = 10


@dataclass(frozen=True)
class TrackerConfig:
    q_pos: float = 1e-2       # process noise, position/width diagonal
    q_vel: float = 1e-1       # process noise, velocity diagonal
    r_meas: float = 1.0       # measurement noise diagonal (px^2)
    gate: float = 50.0        # max association cost, px
    birth_hits: int = 2
    death_misses: int = 3
    p0_pos: float = 1.0       # initial covariance, measured components
    p0_vel: float = 10.0      # initial covariance, velocities

    def __post_init__(self):
        if min(self.q_pos, self.q_vel, self.r_meas) <= 0:
            raise ValidationError("noise diagonals must be > 0")

    def transition(self) -> np.ndarray:
        a = np.eye(6)
        a[0, 3] = a[1, 4] = a[2, 5] = 1.0  # dt = 1 frame
        return a

    def process_noise(self) -> np.ndarray:
        return np.diag([self.q_pos] * 3 + [self.q_vel] * 3)


@dataclass(frozen=True)
class DecisionThresholds:
    conf_thresh: float = 0.7
    expand_window: int = 5
    expand_min_slope: float = 0.5  # px/frame


@dataclass
class KalmanState:
    x: np.ndarray            # (6,)
    p: np.ndarray            # (6, 6)
    track_id: int
    age: int = 1
    hits: int = 1
    misses: int = 0
    confirmed: bool = False
    single: bool = True
    matched_this_frame: bool = True
    matched_kind: str = "single"   # kind of the latest matched measurement
    width_history: list = field(default_factory=list)
    confidence_history: deque = field(default_factory=lambda: deque(maxlen=CONF_HISTORY_LEN))


@dataclass(frozen=True)
class Decision:
    track_id: int
    verdict: str
    reasons: tuple


@dataclass(frozen=True)
class Measurement:
    """One detection for association: a light pair or a single light."""

    centroid: tuple
    width: float | None      # None for singles (position-only update)
    confidence: float
    kind: str                # "pair" | "single"


# ---------------------------------------------------------------------------
# Kalman predict / update
# ---------------------------------------------------------------------------

def kf_predict(state: KalmanState, cfg: TrackerConfig) -> KalmanState:
    """x <- A x (B u = 0); P <- A P A^T + Q."""
    if not np.all(np.isfinite(state.x)):
        raise DivergenceError(f"non-finite track state: {state.x}")
    a = cfg.transition()
    state.x = a @ state.x
    state.p = a @ state.p @ a.T + cfg.process_noise()
    return state


def kf_update(state: KalmanState, z, cfg: TrackerConfig) -> KalmanState:
    """Standard correction; H selects [cx, cy, w] (or [cx, cy] for a 2-D
    measurement).  The covariance is symmetrised afterwards."""
    z = np.asarray(z, dtype=np.float64)
    m = z.size
    h = np.zeros((m, 6))
    for i in range(m):
        h[i, i] = 1.0
    r = np.eye(m) * cfg.r_meas
    innov = z - h @ state.x
    s = h @ state.p @ h.T + r
    try:
        s_inv = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:
        raise DivergenceError(f"singular innovation covariance: {s}") from exc
    k = state.p @ h.T @ s_inv
    state.x = state.x + k @ innov
    p = (np.eye(6) - k @ h) @ state.p
    state.p = (p + p.T) / 2.0
    return state


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------

def hungarian_square(cost: np.ndarray) -> np.ndarray:
    """Exact minimum-cost perfect matching on a square matrix.

    Shortest-augmenting-path formulation with potentials; rows and columns
    are scanned in ascending order, so equal-cost optima resolve toward low
    indices.  Returns col index per row.
    """
    c = np.asarray(cost, dtype=np.float64)
    n = c.shape[0]
    assert c.shape == (n, n)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.full(n + 1, -1, dtype=np.int64)  # match[j] = row at column j
    for i in range(n):
        match[n] = i
        j0 = n
        minv = np.full(n + 1, np.inf)
        way = np.full(n + 1, n, dtype=np.int64)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            cur = c[i0, :] - u[i0] - v[:n]
            better = (~used[:n]) & (cur < minv[:n])
            minv[:n][better] = cur[better]
            way[:n][better] = j0
            free = np.where(~used[:n])[0]
            if free.size:
                j1 = int(free[np.argmin(minv[free])])
                delta = minv[j1]
            else:
                j1 = n
                delta = 0.0
            sel = used.copy()
            u[match[sel]] += delta
            v[sel] -= delta
            minv[~sel] -= delta
            j0 = j1
            if match[j0] == -1:
                break
        while j0 != n:
            j1 = int(way[j0])
            match[j0] = match[j1]
            j0 = j1
    out = np.empty(n, dtype=np.int64)
    for j in range(n):
        if match[j] >= 0:
            out[match[j]] = j
    return out


def solve_assignment(cost: np.ndarray, allowed: np.ndarray | None = None) -> list:
    """Max-cardinality, minimum-total-cost one-to-one assignment.

    cost is (n_rows, n_cols); entries where allowed is False can never be
    assigned.  Implemented by augmenting the matrix with explicit unmatched
    options priced above any real cost, so leaving a row or column unmatched
    is chosen only when forced.  Returns sorted (row, col) pairs.
    """
    cost = np.atleast_2d(np.asarray(cost, dtype=np.float64))
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if allowed is None:
        allowed = np.ones_like(cost, dtype=bool)
    if not allowed.any():
        return []
    cmax = float(cost[allowed].max())
    unmatched = min(n, m) * max(cmax, 0.0) + 1.0
    forbidden = (n + m) * unmatched + 1.0
    size = n + m
    s = np.full((size, size), forbidden)
    s[:n, :m] = np.where(allowed, cost, forbidden)
    for i in range(n):
        s[i, m + i] = unmatched
    for j in range(m):
        s[n + j, j] = unmatched
    s[n:, m:] = 0.0
    col_of_row = hungarian_square(s)
    return sorted(
        (i, int(col_of_row[i]))
        for i in range(n)
        if col_of_row[i] < m and allowed[i, col_of_row[i]]
    )


def associate(tracks, measurements, cfg: TrackerConfig):
    """Gate + Hungarian assignment of predicted tracks to detections.

    Returns (matches, unmatched_track_idx, unmatched_measurement_idx); a
    match is (track index, measurement index).
    """
    if not tracks or not measurements:
        return [], list(range(len(tracks))), list(range(len(measurements)))
    cost = np.zeros((len(tracks), len(measurements)))
    for i, tr in enumerate(tracks):
        for j, meas in enumerate(measurements):
            dx = tr.x[0] - meas.centroid[0]
            dy = tr.x[1] - meas.centroid[1]
            cost[i, j] = np.hypot(dx, dy)
    allowed = cost <= cfg.gate
    matches = solve_assignment(cost, allowed)
    matched_rows = {i for i, _ in matches}
    matched_cols = {j for _, j in matches}
    return (
        matches,
        [i for i in range(len(tracks)) if i not in matched_rows],
        [j for j in range(len(measurements)) if j not in matched_cols],
    )


# ---------------------------------------------------------------------------
# Tracker
# ---------------------------------------------------------------------------

class Tracker:
    """Per-scene multi-object tracker; step() once per frame in order."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig(),
                 thresholds: DecisionThresholds = DecisionThresholds()):
        self.cfg = cfg
        self.thresholds = thresholds
        self.tracks: list = []
        self._next_id = 0

    def _spawn(self, meas: Measurement) -> KalmanState:
        x = np.zeros(6)
        x[0], x[1] = meas.centroid
        x[2] = meas.width if meas.width is not None else 0.0
        p = np.diag([self.cfg.p0_pos] * 3 + [self.cfg.p0_vel] * 3)
        tr = KalmanState(
            x=x, p=p, track_id=self._next_id,
            single=meas.kind == "single",
            matched_kind=meas.kind,
        )
        tr.width_history.append(float(x[2]))
        tr.confidence_history.append(meas.confidence)
        self._next_id += 1
        return tr

    def step(self, measurements) -> list:
        """Advance one frame; returns decisions for confirmed tracks."""
        cfg = self.cfg
        for tr in self.tracks:
            kf_predict(tr, cfg)
            tr.age += 1
            tr.matched_this_frame = False
        matches, unmatched_tracks, unmatched_meas = associate(
            self.tracks, measurements, cfg
        )
        for ti, mi in matches:
            tr = self.tracks[ti]
            meas = measurements[mi]
            if meas.width is not None:
                kf_update(tr, [meas.centroid[0], meas.centroid[1], meas.width], cfg)
                tr.single = False
            else:
                kf_update(tr, [meas.centroid[0], meas.centroid[1]], cfg)
                tr.single = True
            tr.hits += 1
            tr.misses = 0
            tr.matched_this_frame = True
            tr.matched_kind = meas.kind
            tr.confidence_history.append(meas.confidence)
            if tr.hits >= cfg.birth_hits:
                tr.confirmed = True
        for ti in unmatched_tracks:
            self.tracks[ti].misses += 1
        for tr in self.tracks:
            tr.width_history.append(float(tr.x[2]))
        self.tracks = [t for t in self.tracks if t.misses < cfg.death_misses]
        for mi in unmatched_meas:
            self.tracks.append(self._spawn(measurements[mi]))
        self.tracks.sort(key=lambda t: t.track_id)
        return [
            decide(tr, self.cfg, self.thresholds)
            for tr in self.tracks
            if tr.confirmed
        ]


def width_slope(history, window: int) -> float:
    """Least-squares slope of the last `window` width samples (0 when fewer
    than two samples exist)."""
    ys = np.asarray(history[-window:], dtype=np.float64)
    if ys.size < 2:
        return 0.0
    xs = np.arange(ys.size, dtype=np.float64)
    xm = xs.mean()
    ym = ys.mean()
    denom = ((xs - xm) ** 2).sum()
    return float(((xs - xm) * (ys - ym)).sum() / denom)


def decide(track: KalmanState, cfg: TrackerConfig,
           thresholds: DecisionThresholds = DecisionThresholds()) -> Decision:
    """Apply the decision disjunction to a confirmed track."""
    if not track.confirmed:
        raise ValidationError(f"track {track.track_id} is not confirmed")
    reasons = []
    if track.matched_this_frame and track.matched_kind == "pair":
        reasons.append(REASON_GEOMETRY)
    if (not track.single
            and width_slope(track.width_history, thresholds.expand_window)
            >= thresholds.expand_min_slope):
        reasons.append(REASON_EXPANDING)
    if (track.confidence_history
            and float(np.mean(track.confidence_history)) >= thresholds.conf_thresh):
        reasons.append(REASON_CONFIDENCE)
    verdict = VERDICT_LIKELY if reasons else VERDICT_CANDIDATE
    return Decision(track_id=track.track_id, verdict=verdict,
                    reasons=tuple(reasons))


# ---------------------------------------------------------------------------
# Detections -> measurements, wire format
# ---------------------------------------------------------------------------

def measurements_from_detections(pairs, singles) -> list:
    """Build the per-frame measurement list: pairs first, then unpaired
    proposals (every label; clutter is filtered by gating and lifecycle)."""
    out = []
    for lp in pairs:
        out.append(Measurement(
            centroid=lp.centroid,
            width=lp.horizontal_gap,
            confidence=(lp.left.confidence + lp.right.confidence) / 2.0,
            kind="pair",
        ))
    for c in singles:
        out.append(Measurement(
            centroid=c.proposal.centroid,
            width=None,
            confidence=c.confidence,
            kind="single",
        ))
    return out


def track_scene(per_frame_detections, cfg: TrackerConfig = TrackerConfig(),
                thresholds: DecisionThresholds = DecisionThresholds()):
    """Track a whole scene from detect-stage output.

    per_frame_detections: list of (frame_index, proposals, classified, pairs).
    Returns a list of per-frame dicts (frame_index, tracks, decisions).
    """
    from .detect import unpaired

    tracker = Tracker(cfg, thresholds)
    results = []
    for frame_index, _, classified, pairs in per_frame_detections:
        meas = measurements_from_detections(pairs, unpaired(classified, pairs))
        decisions = tracker.step(meas)
        results.append({
            "frame_index": frame_index,
            "tracks": [
                {
                    "id": tr.track_id,
                    "state": [float(v) for v in tr.x],
                    "cov_diag": [float(v) for v in np.diag(tr.p)],
                    "age": tr.age,
                    "hits": tr.hits,
                    "misses": tr.misses,
                    "confirmed": tr.confirmed,
                    "single": tr.single,
                }
                for tr in tracker.tracks
            ],
            "decisions": [
                {"id": d.track_id, "verdict": d.verdict, "reasons": list(d.reasons)}
                for d in decisions
            ],
        })
    return results


def tracks_to_json(scene_id: str, results) -> dict:
    return {"scene_id": scene_id, "frames": results}
