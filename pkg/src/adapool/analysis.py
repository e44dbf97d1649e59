"""Analysis of learned pooling weights.

Each pooling column is viewed as a weight map over its input response map.
Cells with small normalized magnitude are *agnostic*; the remaining cells
split into 4-connected components, each labeled *invariant* (near-constant
weight), *equivariant* (weight linear in position along one axis) or
*mixed*.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .layers import PoolingMatrix, mean_pool_as_matrix
from .tensor import ShapeError

LABELS = ("agnostic", "invariant", "equivariant", "mixed")


@dataclass(frozen=True)
class Thresholds:
    tau_a: float = 0.1
    tau_cv: float = 0.15
    tau_r2: float = 0.8
    tau_cos: float = 0.9
    tau_iou: float = 0.5
    permutations: int = 200
    seed: int = 0


@dataclass
class Segment:
    cells: tuple
    label: str
    slope: float = None
    r2: float = None
    axis: int = None


@dataclass
class InvarianceProfile:
    weights: np.ndarray
    segments: list
    contiguity: float
    distance_to_mean: float = None

    def label_counts(self):
        counts = dict.fromkeys(LABELS, 0)
        for s in self.segments:
            counts[s.label] += 1
        return counts

    def label_map(self):
        out = np.empty(self.weights.shape, dtype=object)
        flat = out.reshape(-1)
        for s in self.segments:
            flat[list(s.cells)] = s.label
        return out


def _as_map(alpha, map_shape):
    alpha = np.asarray(alpha, dtype=np.float64)
    map_shape = tuple(int(s) for s in map_shape)
    if alpha.size != int(np.prod(map_shape)):
        raise ShapeError(f"{alpha.size} weights for map shape {map_shape}")
    return alpha.reshape(map_shape)


def _active_mask(a, tau_a):
    peak = np.max(np.abs(a)) if a.size else 0.0
    if peak == 0.0:
        return np.zeros(a.shape, dtype=bool)
    return np.abs(a) >= tau_a * peak


def _linear_fit(coord, values):
    """Least-squares ``values ~ c0 + c1 * coord``; returns ``(c1, r2)``."""
    x = coord - coord.mean()
    sxx = float(x @ x)
    if sxx == 0.0:
        return 0.0, 0.0
    dv = values - values.mean()
    slope = float(x @ dv) / sxx
    ss_tot = float(dv @ dv)
    if ss_tot == 0.0:
        return 0.0, 1.0
    resid = dv - slope * x
    return slope, 1.0 - float(resid @ resid) / ss_tot


def classify_regions(alpha, map_shape, tau_a=0.1, tau_cv=0.15, tau_r2=0.8, p=None):
    """Segment one pooling weight into agnostic / invariant / equivariant / mixed parts.

    The weight is normalized by its largest magnitude. For every 4-connected
    component of active cells the coefficient of variation decides
    invariance; otherwise a 1-D linear fit along each axis is tried and the
    better axis's slope (normalized weight per cell) is reported. Agnostic
    cells are grouped into their own 4-connected components.

    ``p`` optionally fills in the distance to the nearest ``p x p`` mean
    pooling column.
    """
    a = _as_map(alpha, map_shape)
    peak = np.max(np.abs(a))
    norm = a / peak if peak > 0 else np.zeros_like(a)
    active = _active_mask(a, tau_a)
    segments = []

    lab, n = ndimage.label(~active)
    for k in range(1, n + 1):
        segments.append(Segment(tuple(np.flatnonzero(lab == k).tolist()), "agnostic"))

    lab, n = ndimage.label(active)
    for k in range(1, n + 1):
        mask = lab == k
        cells = np.flatnonzero(mask)
        vals = norm.reshape(-1)[cells]
        mean = vals.mean()
        cv = vals.std() / abs(mean) if mean != 0 else np.inf
        if cv < tau_cv:
            segments.append(Segment(tuple(cells.tolist()), "invariant", 0.0, None, None))
            continue
        coords = np.unravel_index(cells, a.shape)
        fits = [_linear_fit(coords[ax].astype(np.float64), vals) for ax in (0, 1)]
        axis = int(np.argmax([f[1] for f in fits]))
        slope, r2 = fits[axis]
        label = "equivariant" if r2 >= tau_r2 else "mixed"
        segments.append(Segment(tuple(cells.tolist()), label, slope, r2, axis))

    contig = _largest_fraction(active)
    dist = None
    if p is not None:
        dist = float(distance_to_mean_pooling(a.reshape(-1, 1), a.shape, p)[0])
    return InvarianceProfile(norm, segments, contig, dist)


def _largest_fraction(mask):
    total = int(mask.sum())
    if total == 0:
        return 0.0
    lab, n = ndimage.label(mask)
    return int(np.bincount(lab.ravel())[1:].max()) / total


@dataclass
class ContiguityResult:
    score: float
    baseline_mean: float
    baseline_std: float
    baseline_scores: np.ndarray = field(repr=False)


def contiguity_score(alpha, map_shape, tau_a=0.1, permutations=200, seed=0):
    """Largest 4-connected active component as a fraction of active cells.

    The baseline repeats the score for ``permutations`` random placements of
    the same number of active cells. No active cells gives a score of 0.
    """
    a = _as_map(alpha, map_shape)
    mask = _active_mask(a, tau_a)
    rng = np.random.default_rng(seed)
    flat = mask.reshape(-1)
    base = np.array([_largest_fraction(rng.permutation(flat).reshape(mask.shape))
                     for _ in range(permutations)])
    return ContiguityResult(_largest_fraction(mask),
                            float(base.mean()) if permutations else 0.0,
                            float(base.std()) if permutations else 0.0, base)


@dataclass
class LayerContiguity:
    """Mean contiguity over a layer's elements against its permutation null.

    ``baseline_scores[r]`` is the mean over elements of the ``r``-th
    permuted score, so ``baseline_std`` is the spread of the mean statistic.
    """

    scores: np.ndarray
    baseline_scores: np.ndarray = field(repr=False)

    @property
    def mean_score(self):
        return float(self.scores.mean())

    @property
    def baseline_mean(self):
        return float(self.baseline_scores.mean())

    @property
    def baseline_std(self):
        return float(self.baseline_scores.std())

    @property
    def z(self):
        std = self.baseline_std
        diff = self.mean_score - self.baseline_mean
        if std == 0.0:
            return 0.0 if diff == 0 else np.copysign(np.inf, diff)
        return diff / std


def layer_contiguity(A, map_shape=None, tau_a=0.1, permutations=200, seed=0):
    A, map_shape = _matrix(A, map_shape)
    results = [contiguity_score(A[:, i], map_shape, tau_a, permutations, seed + i)
               for i in range(A.shape[1])]
    scores = np.array([r.score for r in results])
    per_perm = np.stack([r.baseline_scores for r in results]).mean(axis=0)
    return LayerContiguity(scores, per_perm)


def _matrix(A, map_shape):
    if isinstance(A, PoolingMatrix):
        map_shape = map_shape or A.map_shape
        A = A.weights
    A = np.asarray(A, dtype=np.float64)
    if map_shape is None:
        raise ValueError("map_shape is required")
    map_shape = tuple(int(s) for s in map_shape)
    if A.shape[0] != int(np.prod(map_shape)):
        raise ShapeError(f"pooling matrix rows {A.shape[0]} vs map shape {map_shape}")
    return A, map_shape


@dataclass
class RedundancyResult:
    pairs: list
    degenerate: list
    cosine: np.ndarray = field(repr=False)
    iou: np.ndarray = field(repr=False)

    def partners(self, i):
        return sorted({b if a == i else a for a, b in self.pairs if i in (a, b)})


def redundancy_pairs(A, tau_cos=0.9, tau_iou=0.5, tau_a=0.1):
    """Pairs ``(i, j)``, ``i < j``, of near-duplicate pooling elements.

    A pair is reported when the cosine similarity of the two columns is at
    least ``tau_cos`` and the IoU of their active supports is at least
    ``tau_iou``. All-zero columns are listed in ``degenerate`` instead.
    """
    W = A.weights if isinstance(A, PoolingMatrix) else np.asarray(A, dtype=np.float64)
    n = W.shape[1]
    if n < 2:
        raise ShapeError("need at least two pooling elements")
    norms = np.linalg.norm(W, axis=0)
    degenerate = np.flatnonzero(norms == 0).tolist()
    ok = norms > 0
    unit = np.zeros_like(W)
    unit[:, ok] = W[:, ok] / norms[ok]
    cosine = unit.T @ unit
    peak = np.abs(W).max(axis=0)
    support = (np.abs(W) >= tau_a * peak) & ok
    S = support.astype(np.float64)
    inter = S.T @ S
    union = S.sum(axis=0)[:, None] + S.sum(axis=0)[None, :] - inter
    iou = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    hit = (cosine >= tau_cos) & (iou >= tau_iou) & ok[:, None] & ok[None, :]
    i, j = np.nonzero(np.triu(hit, k=1))
    return RedundancyResult(list(zip(i.tolist(), j.tolist())), degenerate, cosine, iou)


def distance_to_mean_pooling(A, map_shape=None, p=2):
    """Per-column l1 distance to the nearest ``p x p`` block-mean pooling column."""
    W, map_shape = _matrix(A, map_shape)
    M = mean_pool_as_matrix(map_shape, p).weights
    dist = np.full(W.shape[1], np.inf)
    for b in range(M.shape[1]):
        np.minimum(dist, np.abs(W - M[:, b:b + 1]).sum(axis=0), out=dist)
    return dist


# --------------------------------------------------------------------------
# images

def to_gray(weights):
    """Min-max normalize to ``uint8``; a constant map becomes mid-gray (128)."""
    w = np.asarray(weights, dtype=np.float64)
    lo, hi = w.min(), w.max()
    if hi == lo:
        return np.full(w.shape, 128, dtype=np.uint8)
    return np.rint((w - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, image):
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w)


def export_weight_grid(A, map_shape=None, directory=".", prefix="element", scale=1):
    """One PGM per pooling element plus ``montage.pgm``; returns written paths.

    Darker pixels are smaller weights. Each element is normalized on its own;
    montage tiles are separated by white 1-pixel lines.
    """
    W, map_shape = _matrix(A, map_shape)
    os.makedirs(directory, exist_ok=True)
    paths = []
    tiles = []
    for i in range(W.shape[1]):
        g = to_gray(W[:, i].reshape(map_shape))
        if scale > 1:
            g = np.kron(g, np.ones((scale, scale), dtype=np.uint8))
        path = os.path.join(directory, f"{prefix}_{i:04d}.pgm")
        write_pgm(path, g)
        paths.append(path)
        tiles.append(g)
    n = len(tiles)
    cols = int(np.ceil(np.sqrt(n)))
    rows = -(-n // cols)
    th, tw = tiles[0].shape
    montage = np.full((rows * (th + 1) + 1, cols * (tw + 1) + 1), 255, dtype=np.uint8)
    for k, t in enumerate(tiles):
        r, c = divmod(k, cols)
        montage[1 + r * (th + 1):1 + r * (th + 1) + th, 1 + c * (tw + 1):1 + c * (tw + 1) + tw] = t
    path = os.path.join(directory, "montage.pgm")
    write_pgm(path, montage)
    paths.append(path)
    return paths


# --------------------------------------------------------------------------
# report

REPORT_FIELDS = ("layer", "element", "agnostic", "invariant", "equivariant", "mixed",
                 "contiguity", "baseline", "distance_to_mean", "redundancy_partners")


def analyze_pooling(A, map_shape=None, p=2, thresholds=Thresholds(), layer=0):
    """Report rows (dicts keyed by ``REPORT_FIELDS``) for one pooling matrix."""
    W, map_shape = _matrix(A, map_shape)
    t = thresholds
    dist = distance_to_mean_pooling(W, map_shape, p)
    red = redundancy_pairs(W, t.tau_cos, t.tau_iou, t.tau_a) if W.shape[1] > 1 else None
    rows = []
    for i in range(W.shape[1]):
        prof = classify_regions(W[:, i], map_shape, t.tau_a, t.tau_cv, t.tau_r2)
        cont = contiguity_score(W[:, i], map_shape, t.tau_a, t.permutations, t.seed + i)
        counts = prof.label_counts()
        rows.append({
            "layer": layer,
            "element": i,
            **counts,
            "contiguity": cont.score,
            "baseline": cont.baseline_mean,
            "distance_to_mean": float(dist[i]),
            "redundancy_partners": ";".join(str(j) for j in red.partners(i)) if red else "",
        })
    return rows


def write_report_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
