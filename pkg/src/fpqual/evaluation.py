"""Score-level evaluation of error rates under quality-based rejection.

Threshold convention: a comparison is accepted when ``score >= t``, so
``FAR(t) = #{impostor >= t} / N_imp`` and ``FRR(t) = #{genuine < t} / N_gen``.
Rates are computed from integer counts so results are exactly reproducible.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnattainableRateError, UndefinedStatisticError

BASE_COLUMNS = ("kind", "score", "q_enrol", "q_test")
SUBJECT_COLUMN = "subject"
PAIR_KEY = "pair"


@dataclass(frozen=True)
class ScoreRecord:
    kind: str
    score: float
    q_enrol: float
    q_test: float
    qualities: dict = field(default_factory=dict)
    subject: str | None = None

    def __post_init__(self):
        if self.kind not in ("genuine", "impostor"):
            raise ValueError(f"kind must be 'genuine' or 'impostor', got {self.kind!r}")
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")
        for name, q in (("q_enrol", self.q_enrol), ("q_test", self.q_test), *self.qualities.items()):
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"quality {name}={q} outside [0, 1]")

    @property
    def genuine(self) -> bool:
        return self.kind == "genuine"


def pair_quality(record_or_qe, q_test=None) -> float:
    """Geometric mean of enrolment and test quality."""
    if q_test is None:
        qe, qt = record_or_qe.q_enrol, record_or_qe.q_test
    else:
        qe, qt = record_or_qe, q_test
    return math.sqrt(qe * qt)


class ScoreSet:
    """Column-oriented collection of score records.

    ``genuine`` is a boolean array; ``qualities`` maps extra metric names to
    per-record quality arrays.
    """

    def __init__(self, genuine, scores, q_enrol, q_test, qualities=None, subjects=None, metadata=None):
        self.genuine = np.asarray(genuine, dtype=bool)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.q_enrol = np.asarray(q_enrol, dtype=np.float64)
        self.q_test = np.asarray(q_test, dtype=np.float64)
        self.qualities = {k: np.asarray(v, dtype=np.float64) for k, v in (qualities or {}).items()}
        self.subjects = None if subjects is None else np.asarray(subjects, dtype=object)
        self.metadata = dict(metadata or {})
        n = len(self.scores)
        arrays = [self.genuine, self.q_enrol, self.q_test, *self.qualities.values()]
        if self.subjects is not None:
            arrays.append(self.subjects)
        if any(len(a) != n for a in arrays):
            raise ValueError("all score-set columns must have equal length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        for name, q in (("q_enrol", self.q_enrol), ("q_test", self.q_test), *self.qualities.items()):
            if n and (np.any(~np.isfinite(q)) or q.min() < 0 or q.max() > 1):
                raise ValueError(f"quality column {name!r} has values outside [0, 1]")
        for a in (self.genuine, self.scores, self.q_enrol, self.q_test, *self.qualities.values()):
            a.setflags(write=False)

    @classmethod
    def from_records(cls, records, metadata=None) -> "ScoreSet":
        records = list(records)
        keys = sorted({k for r in records for k in r.qualities})
        quals = {k: [r.qualities[k] for r in records] for k in keys}
        subjects = None
        if any(r.subject is not None for r in records):
            subjects = [r.subject for r in records]
        return cls([r.genuine for r in records], [r.score for r in records],
                   [r.q_enrol for r in records], [r.q_test for r in records],
                   quals, subjects, metadata)

    def __len__(self):
        return len(self.scores)

    def records(self):
        for i in range(len(self)):
            yield ScoreRecord(
                "genuine" if self.genuine[i] else "impostor", float(self.scores[i]),
                float(self.q_enrol[i]), float(self.q_test[i]),
                {k: float(v[i]) for k, v in self.qualities.items()},
                None if self.subjects is None else self.subjects[i],
            )

    @property
    def genuine_scores(self) -> np.ndarray:
        return self.scores[self.genuine]

    @property
    def impostor_scores(self) -> np.ndarray:
        return self.scores[~self.genuine]

    def paired_quality(self, key: str | None = None) -> np.ndarray:
        """Per-record quality: a named column, or sqrt(q_enrol * q_test) by default."""
        if key is None or key == PAIR_KEY:
            return np.sqrt(self.q_enrol * self.q_test)
        if key not in self.qualities:
            available = ", ".join([PAIR_KEY, *sorted(self.qualities)])
            raise KeyError(f"no quality column {key!r}; available: {available}")
        return self.qualities[key]

    def subset(self, index) -> "ScoreSet":
        return ScoreSet(self.genuine[index], self.scores[index], self.q_enrol[index], self.q_test[index],
                        {k: v[index] for k, v in self.qualities.items()},
                        None if self.subjects is None else self.subjects[index], self.metadata)

    def __eq__(self, other):
        if not isinstance(other, ScoreSet):
            return NotImplemented
        same_subjects = (self.subjects is None and other.subjects is None) or (
            self.subjects is not None and other.subjects is not None
            and np.array_equal(self.subjects, other.subjects))
        return (np.array_equal(self.genuine, other.genuine) and np.array_equal(self.scores, other.scores)
                and np.array_equal(self.q_enrol, other.q_enrol) and np.array_equal(self.q_test, other.q_test)
                and self.qualities.keys() == other.qualities.keys()
                and all(np.array_equal(v, other.qualities[k]) for k, v in self.qualities.items())
                and same_subjects)

    __hash__ = None


# --------------------------------------------------------------------- CSV I/O


class ScoreCsvError(ValueError):
    def __init__(self, message, row=None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


def read_score_csv(source) -> ScoreSet:
    """Parse ``kind,score,q_enrol,q_test[,subject][,<metric>...]`` CSV text or a path."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows:
        raise ScoreCsvError("empty score file")
    header = [h.strip() for h in rows[0]]
    if tuple(header[:4]) != BASE_COLUMNS:
        raise ScoreCsvError(f"header must start with {','.join(BASE_COLUMNS)}, got {','.join(header)}", 1)
    extra = header[4:]
    metric_cols = [h for h in extra if h != SUBJECT_COLUMN]
    has_subject = SUBJECT_COLUMN in extra
    genuine, scores, qe, qt, subjects = [], [], [], [], []
    quals = {m: [] for m in metric_cols}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ScoreCsvError(f"expected {len(header)} fields, got {len(row)}", lineno)
        rec = dict(zip(header, (c.strip() for c in row)))
        kind = rec["kind"]
        if kind not in ("genuine", "impostor"):
            raise ScoreCsvError(f"kind must be genuine or impostor, got {kind!r}", lineno)
        try:
            values = {k: float(rec[k]) for k in ("score", "q_enrol", "q_test", *metric_cols)}
        except ValueError as exc:
            raise ScoreCsvError(f"non-numeric field ({exc})", lineno) from None
        if not math.isfinite(values["score"]):
            raise ScoreCsvError("score must be finite", lineno)
        for k in ("q_enrol", "q_test", *metric_cols):
            if not 0.0 <= values[k] <= 1.0:
                raise ScoreCsvError(f"quality {k}={values[k]} outside [0, 1]", lineno)
        genuine.append(kind == "genuine")
        scores.append(values["score"])
        qe.append(values["q_enrol"])
        qt.append(values["q_test"])
        for m in metric_cols:
            quals[m].append(values[m])
        if has_subject:
            subjects.append(rec[SUBJECT_COLUMN])
    return ScoreSet(genuine, scores, qe, qt, quals, subjects if has_subject else None)


def write_score_csv(scores: ScoreSet, fh):
    cols = list(BASE_COLUMNS)
    if scores.subjects is not None:
        cols.append(SUBJECT_COLUMN)
    metrics = sorted(scores.qualities)
    cols += metrics
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for i in range(len(scores)):
        row = ["genuine" if scores.genuine[i] else "impostor", repr(float(scores.scores[i])),
               repr(float(scores.q_enrol[i])), repr(float(scores.q_test[i]))]
        if scores.subjects is not None:
            row.append(scores.subjects[i])
        row += [repr(float(scores.qualities[m][i])) for m in metrics]
        w.writerow(row)


# ---------------------------------------------------------------- error rates


def _split(scores: ScoreSet):
    gen = np.sort(scores.genuine_scores)
    imp = np.sort(scores.impostor_scores)
    if len(gen) == 0 or len(imp) == 0:
        raise ValueError(
            f"need at least one genuine and one impostor score (got {len(gen)} and {len(imp)})")
    return gen, imp


def _counts(gen, imp, thresholds):
    """Integer counts of false accepts (imp >= t) and false rejects (gen < t)."""
    fa = len(imp) - np.searchsorted(imp, thresholds, side="left")
    fr = np.searchsorted(gen, thresholds, side="left")
    return fa, fr


def compute_eer(scores: ScoreSet) -> float:
    """Equal error rate at the distinct-score threshold minimizing |FAR - FRR|.

    Returns the FAR/FRR midpoint there; ties go to the lower threshold.
    """
    gen, imp = _split(scores)
    ng, ni = len(gen), len(imp)
    thresholds = np.unique(np.concatenate([gen, imp]))
    fa, fr = _counts(gen, imp, thresholds)
    # |fa/ni - fr/ng| compared on a common integer denominator
    gap = np.abs(fa * ng - fr * ni)
    k = int(np.argmin(gap))
    return (int(fa[k]) * ng + int(fr[k]) * ni) / (2 * ni * ng)


def _allowed(alpha: float, n: int) -> int:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"rate {alpha} outside [0, 1]")
    allowed = int(math.floor(alpha * n + 1e-9))
    if allowed < 1 and alpha > 0:
        raise UnattainableRateError(alpha, n)
    return allowed


def error_at_operating_point(scores: ScoreSet, far: float | None = None, frr: float | None = None) -> float:
    """Complementary error rate at a fixed FAR or FRR.

    ``far=a``: lowest threshold whose FAR <= a, returns FRR there.
    ``frr=a``: highest threshold whose FRR <= a, returns FAR there.
    Raises :class:`UnattainableRateError` when fewer than ``1/a`` scores
    exist on the fixed side.
    """
    if (far is None) == (frr is None):
        raise ValueError("fix exactly one of far= or frr=")
    gen, imp = _split(scores)
    thresholds = np.append(np.unique(np.concatenate([gen, imp])), np.inf)
    fa, fr = _counts(gen, imp, thresholds)
    if far is not None:
        allowed = _allowed(far, len(imp))
        k = int(np.argmax(fa <= allowed))  # fa is non-increasing; +inf guarantees a hit
        return int(fr[k]) / len(gen)
    allowed = _allowed(frr, len(gen))
    ok = np.nonzero(fr <= allowed)[0]
    k = int(ok[-1])  # fr is non-decreasing and fr[0] == 0
    return int(fa[k]) / len(imp)


@dataclass(frozen=True)
class RejectionCurve:
    """Error rates after dropping the lowest-quality fraction of scores.

    Unattainable points are NaN.
    """

    fractions: np.ndarray
    eer: np.ndarray
    far_at_frr: np.ndarray
    frr_at_far: np.ndarray
    fixed_frr: float = 0.01
    fixed_far: float = 0.01
    n_kept: np.ndarray | None = None

    def rows(self):
        for i, f in enumerate(self.fractions):
            yield float(f), float(self.eer[i]), float(self.far_at_frr[i]), float(self.frr_at_far[i])


def _rates_or_nan(scores: ScoreSet, fixed_frr, fixed_far):
    out = []
    for fn in (lambda: compute_eer(scores),
               lambda: error_at_operating_point(scores, frr=fixed_frr),
               lambda: error_at_operating_point(scores, far=fixed_far)):
        try:
            out.append(fn())
        except (UnattainableRateError, ValueError):
            out.append(math.nan)
    return out


def rejection_sweep(scores: ScoreSet, quality_key: str | None = None, fractions=(0.0, 0.05, 0.1),
                    fixed_frr: float = 0.01, fixed_far: float = 0.01) -> RejectionCurve:
    """Recompute error rates after discarding the ``floor(f*N)`` lowest-quality scores.

    Quality ties keep input order (stable sort).
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.ndim != 1 or len(fractions) == 0:
        raise ValueError("fractions must be a non-empty 1-D sequence")
    if np.any(fractions < 0) or np.any(fractions >= 1) or np.any(np.diff(fractions) < 0):
        raise ValueError("fractions must be ascending within [0, 1)")
    q = scores.paired_quality(quality_key)
    order = np.argsort(q, kind="stable")
    n = len(scores)
    eer, far_at_frr, frr_at_far, kept = [], [], [], []
    for f in fractions:
        drop = int(math.floor(f * n + 1e-9))
        keep = np.sort(order[drop:])
        sub = scores if drop == 0 else scores.subset(keep)
        e, fa, fr = _rates_or_nan(sub, fixed_frr, fixed_far)
        eer.append(e)
        far_at_frr.append(fa)
        frr_at_far.append(fr)
        kept.append(n - drop)
    return RejectionCurve(fractions, np.array(eer), np.array(far_at_frr), np.array(frr_at_far),
                          fixed_frr, fixed_far, np.array(kept))


def write_curve_csv(curve: RejectionCurve, fh):
    fh.write("fraction,eer,far_at_frr,frr_at_far\n")
    for row in curve.rows():
        fh.write(",".join("" if math.isnan(v) else f"{v:.10g}" for v in row) + "\n")


# ---------------------------------------------------------- separation & corr


def separation_statistic(genuine_score: float, impostor_scores) -> float:
    """(s - mean(impostors)) / std(impostors), population standard deviation."""
    imp = np.asarray(impostor_scores, dtype=np.float64)
    if imp.size < 2:
        raise UndefinedStatisticError("need at least two impostor scores")
    sd = float(imp.std())
    if sd == 0.0:
        raise UndefinedStatisticError("impostor scores have zero standard deviation")
    return (float(genuine_score) - float(imp.mean())) / sd


def subject_separation(scores: ScoreSet) -> list[tuple[str, float, float | None, str | None]]:
    """Separation statistic for every genuine score, grouped by subject label.

    Returns ``(subject, genuine_score, o, error)`` tuples in input order;
    ``o`` is None and ``error`` set where the statistic is undefined.
    """
    if scores.subjects is None:
        raise ValueError("score set has no subject labels")
    out = []
    for subj in dict.fromkeys(scores.subjects):
        sel = scores.subjects == subj
        imp = scores.scores[sel & ~scores.genuine]
        for s in scores.scores[sel & scores.genuine]:
            try:
                out.append((subj, float(s), separation_statistic(s, imp), None))
            except UndefinedStatisticError as exc:
                out.append((subj, float(s), None, str(exc)))
    return out


def pearson_correlation(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D sequences of equal length")
    if len(x) < 2:
        raise ValueError("need at least two paired values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedStatisticError("correlation undefined: zero variance")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class CorrelationMatrix:
    """Pairwise Pearson correlations; NaN marks undefined (zero-variance) metrics."""

    names: tuple
    values: np.ndarray
    undefined: tuple = ()

    def to_csv(self) -> str:
        lines = ["metric," + ",".join(self.names)]
        for i, name in enumerate(self.names):
            cells = ["" if math.isnan(v) else f"{v:.6f}" for v in self.values[i]]
            lines.append(name + "," + ",".join(cells))
        return "\n".join(lines) + "\n"


def metric_correlation_matrix(table: dict, metrics=None) -> CorrelationMatrix:
    """Correlate metrics across images; ``table`` maps image -> {metric: score}."""
    images = list(table)
    if len(images) < 2:
        raise ValueError("need at least two images")
    if metrics is None:
        metrics = list(table[images[0]])
    metrics = tuple(metrics)
    if len(metrics) < 2:
        raise ValueError("need at least two metrics")
    cols = {m: np.array([float(table[i][m]) for i in images]) for m in metrics}
    undefined = tuple(m for m in metrics if np.all(cols[m] == cols[m][0]))
    k = len(metrics)
    values = np.full((k, k), np.nan)
    for a in range(k):
        if metrics[a] in undefined:
            continue
        values[a, a] = 1.0
        for b in range(a + 1, k):
            if metrics[b] in undefined:
                continue
            values[a, b] = values[b, a] = pearson_correlation(cols[metrics[a]], cols[metrics[b]])
    return CorrelationMatrix(metrics, values, undefined)
