"""Light proposal generation, classification, and symmetric pairing.

Proposals come from a centre-surround saliency map (3x3 box mean minus 9x9
box mean, rectified and max-normalised) thresholded at tau, followed by
8-connected component labelling.  Each proposal is described by seven fixed
features and classified into headlight / taillight / artifact by a
multinomial logistic model trained with full-batch gradient descent; the
confidence is the softmax probability of the winning class.

Pairing keeps non-artifact proposals whose centroids are vertically within
eps_y and horizontally separated by [d_min, d_max]; conflicts are resolved
greedily on ascending vertical gap, so each proposal joins at most one pair.

Everything here is a pure per-frame function; frames may be processed in
parallel.  ClassifierModel is immutable once trained.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

CATEGORIES = ("headlight", "taillight", "artifact")

FEATURE_NAMES = (
    "mean_intensity",
    "peak_intensity",
    "area",
    "aspect_ratio",
    "norm_y",
    "border_contrast",
    "circularity",
)


@dataclass(frozen=True)
class DetectConfig:
    """Thresholds in pixels; use for_image() to derive the fraction-based
    defaults (eps_y = 0.02 H, d_min = 0.05 W, d_max = 0.5 W)."""

    tau: float = 0.85
    a_min: int = 4
    a_max: int = 2000
    eps_y: float = 10.0
    d_min: float = 5.0
    d_max: float = 100.0

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValidationError(f"tau must be in (0, 1), got {self.tau}")
        if self.a_min > self.a_max:
            raise ValidationError(f"a_min {self.a_min} > a_max {self.a_max}")
        if self.d_min > self.d_max:
            raise ValidationError(f"d_min {self.d_min} > d_max {self.d_max}")

    @classmethod
    def for_image(cls, width: int, height: int, tau: float = 0.85,
                  a_min: int = 4, a_max: int = 2000,
                  eps_y_frac: float = 0.02, d_min_frac: float = 0.05,
                  d_max_frac: float = 0.5) -> "DetectConfig":
        return cls(tau=tau, a_min=a_min, a_max=a_max,
                   eps_y=eps_y_frac * height,
                   d_min=d_min_frac * width,
                   d_max=d_max_frac * width)


@dataclass(frozen=True)
class Proposal:
    bbox: tuple          # (x, y, w, h) ints
    centroid: tuple      # (x, y) sub-pixel
    area: int
    peak_intensity: float
    saliency_score: float


@dataclass(frozen=True)
class ClassifiedProposal:
    proposal: Proposal
    label: str
    confidence: float


@dataclass(frozen=True)
class LightPair:
    left: ClassifiedProposal
    right: ClassifiedProposal
    vertical_gap: float
    horizontal_gap: float

    @property
    def centroid(self) -> tuple:
        lx, ly = self.left.proposal.centroid
        rx, ry = self.right.proposal.centroid
        return ((lx + rx) / 2.0, (ly + ry) / 2.0)


# ---------------------------------------------------------------------------
# Saliency
# ---------------------------------------------------------------------------

def _box_mean(img: np.ndarray, size: int) -> np.ndarray:
    """size x size box mean with reflect padding (same-size output)."""
    half = size // 2
    pad = np.pad(img, half, mode="reflect")
    k = np.ones(size) / size
    t = np.lib.stride_tricks.sliding_window_view(pad, size, axis=0) @ k
    return np.lib.stride_tricks.sliding_window_view(t, size, axis=1) @ k


def saliency_map(img: np.ndarray) -> np.ndarray:
    """Centre-surround saliency: 3x3 mean minus 9x9 mean, rectified, then
    max-normalised to [0, 1] when any response is positive."""
    img = np.asarray(img, dtype=np.float64)
    s = np.maximum(_box_mean(img, 3) - _box_mean(img, 9), 0.0)
    peak = s.max()
    if peak > 0:
        s = s / peak
    return s


# ---------------------------------------------------------------------------
# Connected components (run-based two-pass union-find)
# ---------------------------------------------------------------------------

def label_components(mask: np.ndarray) -> list:
    """8-connected components of a boolean mask.

    Returns a list of (rows, cols) index arrays, ordered by first-scan
    position (row-major), independent of any pixel scan order quirks.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    parent = []

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            parent[rb] = ra

    runs_prev = []  # (c0, c1, label) on the previous row
    runs_all = []   # (row, c0, c1, label)
    for r in range(h):
        row = mask[r]
        if not row.any():
            runs_prev = []
            continue
        diffs = np.diff(row.astype(np.int8))
        starts = list(np.flatnonzero(diffs == 1) + 1)
        ends = list(np.flatnonzero(diffs == -1) + 1)
        if row[0]:
            starts.insert(0, 0)
        if row[-1]:
            ends.append(w)
        runs_cur = []
        for c0, c1 in zip(starts, ends):
            lbl = len(parent)
            parent.append(lbl)
            # 8-connectivity: overlap with [c0-1, c1+1) on the previous row
            for p0, p1, plbl in runs_prev:
                if p0 < c1 + 1 and p1 > c0 - 1:
                    union(lbl, plbl)
            runs_cur.append((c0, c1, lbl))
            runs_all.append((r, c0, c1, lbl))
        runs_prev = runs_cur

    groups = {}
    order = []
    for r, c0, c1, lbl in runs_all:
        root = find(lbl)
        if root not in groups:
            groups[root] = []
            order.append(root)
        groups[root].append((r, c0, c1))
    components = []
    for root in order:
        rows = np.concatenate([np.full(c1 - c0, r) for r, c0, c1 in groups[root]])
        cols = np.concatenate([np.arange(c0, c1) for r, c0, c1 in groups[root]])
        components.append((rows, cols))
    return components


def propose(saliency: np.ndarray, cfg: DetectConfig,
            img: np.ndarray | None = None) -> list:
    """Threshold the saliency map at tau and extract component proposals.

    peak_intensity comes from `img` when given (the enhanced frame),
    otherwise from the saliency map itself.  Output is sorted by
    (centroid y, centroid x) regardless of scan order.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    intensity = saliency if img is None else np.asarray(img, dtype=np.float64)
    mask = saliency > cfg.tau
    proposals = []
    for rows, cols in label_components(mask):
        area = rows.size
        if not cfg.a_min <= area <= cfg.a_max:
            continue
        x0, x1 = int(cols.min()), int(cols.max())
        y0, y1 = int(rows.min()), int(rows.max())
        proposals.append(
            Proposal(
                bbox=(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
                centroid=(float(cols.mean()), float(rows.mean())),
                area=int(area),
                peak_intensity=float(intensity[rows, cols].max()),
                saliency_score=float(saliency[rows, cols].max()),
            )
        )
    proposals.sort(key=lambda p: (p.centroid[1], p.centroid[0]))
    return proposals


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def _crack_perimeter(mask: np.ndarray) -> float:
    """Boundary length as the count of inside/outside pixel-side transitions,
    scaled by pi/4 (exact for large rasterised disks)."""
    padded = np.pad(mask, 1).astype(np.int8)
    cracks = (
        np.abs(np.diff(padded, axis=0)).sum()
        + np.abs(np.diff(padded, axis=1)).sum()
    )
    return float(cracks) * math.pi / 4.0


def extract_features(img: np.ndarray, p: Proposal) -> np.ndarray:
    """Seven fixed features for one proposal (order = FEATURE_NAMES)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    x, y, bw, bh = (int(round(v)) for v in p.bbox)
    if x < 0 or y < 0 or x + bw > w or y + bh > h:
        raise ValidationError(f"proposal bbox {p.bbox} outside image {w}x{h}")
    box = img[y : y + bh, x : x + bw]
    mean_inside = float(box.mean())
    peak = float(box.max())

    ring = 2
    rx0, ry0 = max(x - ring, 0), max(y - ring, 0)
    rx1, ry1 = min(x + bw + ring, w), min(y + bh + ring, h)
    outer = img[ry0:ry1, rx0:rx1]
    ring_mask = np.ones(outer.shape, dtype=bool)
    ring_mask[y - ry0 : y - ry0 + bh, x - rx0 : x - rx0 + bw] = False
    ring_mean = float(outer[ring_mask].mean()) if ring_mask.any() else mean_inside
    border_contrast = mean_inside - ring_mean

    thresh = 0.5 * (peak + ring_mean)
    local = box > thresh
    if not local.any():
        circularity = 0.0
    else:
        perim = _crack_perimeter(local)
        circularity = 4.0 * math.pi * float(local.sum()) / (perim * perim) if perim > 0 else 0.0

    return np.array([
        mean_inside,
        peak,
        float(p.area),
        bw / bh if bh > 0 else 0.0,
        p.centroid[1] / h,
        border_contrast,
        circularity,
    ])


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierModel:
    """Multinomial logistic model over the seven proposal features.

    predict_proba on the worked example weights W[0,0]=0.2, W[2,0]=-0.1,
    zero elsewhere, features (1, 0, ..., 0), zero bias gives logits
    (0.2, 0, -0.1), exp = (1.2214027582, 1, 0.9048374180), sum
    3.1262401762, softmax (0.3906938333, 0.3198730563, 0.2894331104).
    """

    feature_names: tuple
    weights: np.ndarray   # (3, n_features)
    bias: np.ndarray      # (3,)
    mean: np.ndarray      # z-score statistics
    std: np.ndarray

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.mean) / self.std

    def predict_proba(self, feats: np.ndarray) -> np.ndarray:
        z = self.normalize(np.atleast_2d(feats))
        logits = z @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def to_json(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "categories": list(CATEGORIES),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClassifierModel":
        return cls(
            feature_names=tuple(doc["feature_names"]),
            weights=np.array(doc["weights"], dtype=np.float64),
            bias=np.array(doc["bias"], dtype=np.float64),
            mean=np.array(doc["mean"], dtype=np.float64),
            std=np.array(doc["std"], dtype=np.float64),
        )

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def uniform_model() -> ClassifierModel:
    """Zero-weight model: every class gets probability exactly 1/3."""
    n = len(FEATURE_NAMES)
    return ClassifierModel(
        feature_names=FEATURE_NAMES,
        weights=np.zeros((3, n)),
        bias=np.zeros(3),
        mean=np.zeros(n),
        std=np.ones(n),
    )


def train_classifier(features: np.ndarray, labels,
                     lr: float = 0.5, max_iter: int = 10000,
                     tol: float = 1e-6) -> ClassifierModel:
    """Fit the multinomial logistic model by full-batch gradient descent.

    features: (n, 7); labels: category names or indices.  Requires at least
    10 examples per category and non-degenerate features.  Training runs to
    relative loss change < tol or max_iter iterations.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.array([
        CATEGORIES.index(l) if isinstance(l, str) else int(l) for l in labels
    ])
    if x.ndim != 2 or x.shape[1] != len(FEATURE_NAMES):
        raise ValidationError(f"features must be (n, {len(FEATURE_NAMES)})")
    counts = np.bincount(y, minlength=3)
    if (counts < 10).any():
        bad = [CATEGORIES[i] for i in range(3) if counts[i] < 10]
        raise ValidationError(f"need >= 10 examples per category, short on {bad}")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    if (std < 1e-12).any():
        bad = [FEATURE_NAMES[i] for i in range(x.shape[1]) if std[i] < 1e-12]
        raise ValidationError(f"degenerate (constant) features: {bad}")
    z = (x - mean) / std
    n = z.shape[0]
    onehot = np.zeros((n, 3))
    onehot[np.arange(n), y] = 1.0
    w = np.zeros((3, z.shape[1]))
    b = np.zeros(3)
    prev = np.inf
    for _ in range(max_iter):
        logits = z @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        nll = float(-np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300))))
        g = (p - onehot) / n
        w -= lr * (g.T @ z)
        b -= lr * g.sum(axis=0)
        if prev - nll < tol * max(abs(prev), 1.0) and np.isfinite(prev):
            break
        prev = nll
    return ClassifierModel(feature_names=FEATURE_NAMES, weights=w, bias=b,
                           mean=mean, std=std)


def classify(model: ClassifierModel, img: np.ndarray, proposals) -> list:
    """Label each proposal with its argmax class and softmax confidence.

    Ties break deterministically in category order (headlight < taillight <
    artifact), which np.argmax's first-maximum rule provides.
    """
    out = []
    for p in proposals:
        feats = extract_features(img, p)
        probs = model.predict_proba(feats)[0]
        idx = int(np.argmax(probs))
        out.append(ClassifiedProposal(
            proposal=p, label=CATEGORIES[idx], confidence=float(probs[idx]),
        ))
    return out


# ---------------------------------------------------------------------------
# Pairing
# ---------------------------------------------------------------------------

def pair_constraints_ok(a: ClassifiedProposal, b: ClassifiedProposal,
                        cfg: DetectConfig) -> bool:
    ya = a.proposal.centroid[1]
    yb = b.proposal.centroid[1]
    dx = abs(a.proposal.centroid[0] - b.proposal.centroid[0])
    return abs(ya - yb) < cfg.eps_y and cfg.d_min <= dx <= cfg.d_max


def pair(classified, cfg: DetectConfig) -> list:
    """Greedy maximal matching of non-artifact proposals under the vertical
    tolerance and horizontal gap constraints."""
    cands = [(i, c) for i, c in enumerate(classified) if c.label != "artifact"]
    options = []
    for a_pos in range(len(cands)):
        for b_pos in range(a_pos + 1, len(cands)):
            ia, ca = cands[a_pos]
            ib, cb = cands[b_pos]
            if not pair_constraints_ok(ca, cb, cfg):
                continue
            if ca.proposal.centroid[0] > cb.proposal.centroid[0]:
                ia, ca, ib, cb = ib, cb, ia, ca
            vgap = abs(ca.proposal.centroid[1] - cb.proposal.centroid[1])
            hgap = abs(ca.proposal.centroid[0] - cb.proposal.centroid[0])
            options.append((vgap, hgap, ca.proposal.centroid[0], ia, ib, ca, cb))
    options.sort(key=lambda o: (o[0], o[1], o[2], o[3], o[4]))
    used = set()
    pairs = []
    for vgap, hgap, _, ia, ib, ca, cb in options:
        if ia in used or ib in used:
            continue
        used.add(ia)
        used.add(ib)
        pairs.append(LightPair(left=ca, right=cb,
                               vertical_gap=vgap, horizontal_gap=hgap))
    return pairs


def unpaired(classified, pairs) -> list:
    """Classified proposals not consumed by any pair (all labels)."""
    taken = set()
    for lp in pairs:
        taken.add(id(lp.left))
        taken.add(id(lp.right))
    return [c for c in classified if id(c) not in taken]


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

def detections_to_json(scene_id: str, per_frame) -> dict:
    """per_frame: list of (frame_index, proposals, classified, pairs)."""
    frames = []
    for frame_index, proposals, classified, pairs in per_frame:
        index_of = {id(c): i for i, c in enumerate(classified)}
        frames.append({
            "frame_index": frame_index,
            "proposals": [
                {
                    "bbox": list(p.bbox),
                    "centroid": list(p.centroid),
                    "area": p.area,
                    "peak_intensity": p.peak_intensity,
                    "saliency_score": p.saliency_score,
                }
                for p in proposals
            ],
            "classified": [
                {"proposal_index": i, "label": c.label, "confidence": c.confidence}
                for i, c in enumerate(classified)
            ],
            "pairs": [
                {
                    "left_index": index_of[id(lp.left)],
                    "right_index": index_of[id(lp.right)],
                    "vertical_gap": lp.vertical_gap,
                    "horizontal_gap": lp.horizontal_gap,
                }
                for lp in pairs
            ],
        })
    return {"scene_id": scene_id, "frames": frames}


def detections_from_json(doc: dict):
    """Inverse of detections_to_json; returns (scene_id, per_frame)."""
    per_frame = []
    for fr in doc["frames"]:
        proposals = [
            Proposal(
                bbox=tuple(p["bbox"]),
                centroid=tuple(p["centroid"]),
                area=int(p["area"]),
                peak_intensity=float(p["peak_intensity"]),
                saliency_score=float(p["saliency_score"]),
            )
            for p in fr["proposals"]
        ]
        classified = [
            ClassifiedProposal(
                proposal=proposals[int(c["proposal_index"])],
                label=str(c["label"]),
                confidence=float(c["confidence"]),
            )
            for c in fr["classified"]
        ]
        pairs = [
            LightPair(
                left=classified[int(p["left_index"])],
                right=classified[int(p["right_index"])],
                vertical_gap=float(p["vertical_gap"]),
                horizontal_gap=float(p["horizontal_gap"]),
            )
            for p in fr["pairs"]
        ]
        per_frame.append((int(fr["frame_index"]), proposals, classified, pairs))
    return str(doc["scene_id"]), per_frame
