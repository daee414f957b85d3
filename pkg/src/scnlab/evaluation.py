"""Point-to-point errors, cumulative error distributions and the
reduced-training-set comparison between the SCN and the baseline."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .heatmap import as_landmarks, extract_landmarks
from .model import MODEL_KINDS, NetConfig, Params, predict, scn_forward
from .training import Hyperparams, batch_arrays, train

DEFAULT_THRESHOLDS = np.arange(0, 41) * 0.25   # 0 .. 10 px
OUTLIER_RADIUS = 2.0


def point_to_point_error(pred, gt) -> np.ndarray:
    """Euclidean distance per landmark, in landmark order."""
    p, g = as_landmarks(pred), as_landmarks(gt)
    if p.shape != g.shape:
        raise InvalidInputError(f"landmark sets differ: {p.shape} vs {g.shape}")
    return np.hypot(p[:, 0] - g[:, 0], p[:, 1] - g[:, 1])


class CedCurve(NamedTuple):
    thresholds: np.ndarray
    fractions: np.ndarray


def cumulative_error_distribution(errors, thresholds=DEFAULT_THRESHOLDS) -> CedCurve:
    """Fraction of errors ``<= t`` for each threshold ``t`` (thresholds ascending)."""
    e = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    t = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    if np.any(np.diff(t) < 0):
        raise InvalidInputError("thresholds must be sorted ascending")
    if e.size == 0:
        return CedCurve(t, np.zeros_like(t))
    frac = np.searchsorted(e, t, side="right") / e.size
    return CedCurve(t, frac)


@dataclass
class ErrorReport:
    """Errors of one trained model on a test set, shape ``(n_images, N)``."""

    model: str
    train_size: int
    seed: int
    image_ids: list
    errors: np.ndarray
    train_ids: list = field(default_factory=list, repr=False)

    @property
    def flat(self) -> np.ndarray:
        return self.errors.reshape(-1)

    @property
    def mean(self) -> float:
        return float(self.flat.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.flat))

    @property
    def max(self) -> float:
        return float(self.flat.max())

    def outliers(self, radius: float = OUTLIER_RADIUS) -> int:
        return int(np.count_nonzero(self.flat > radius))

    def ced(self, thresholds=DEFAULT_THRESHOLDS) -> CedCurve:
        return cumulative_error_distribution(self.flat, thresholds)


def evaluate(params: Params, samples: Sequence, model: str = None, train_size: int = 0,
             seed: int = 0, batch_size: int = 16) -> ErrorReport:
    rows = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        preds = predict(params, batch_arrays(chunk))
        rows += [point_to_point_error(p, s.landmarks) for p, s in zip(preds, chunk)]
    return ErrorReport(model or params.kind, train_size, seed, [s.id for s in samples], np.array(rows))


@dataclass(frozen=True)
class ExperimentSpec:
    train_sizes: tuple = (100, 50, 10)
    n_test: int = 100
    model_kinds: tuple = MODEL_KINDS
    seeds: tuple = (0, 1, 2)
    hyperparams: Hyperparams = Hyperparams()
    net_config: Optional[NetConfig] = None
    steps: Optional[int] = 200        # fixed optimisation budget per run; None uses hp.epochs
    thresholds: tuple = tuple(DEFAULT_THRESHOLDS)

    def __post_init__(self):
        if not self.train_sizes or min(self.train_sizes) < 1:
            raise InvalidInputError("train sizes must be positive")
        if self.n_test < 1:
            raise InvalidInputError("n_test must be >= 1")
        for k in self.model_kinds:
            if k not in MODEL_KINDS:
                raise InvalidInputError(f"unknown model kind {k!r}")

    def hyperparams_for(self, size: int, seed: int) -> Hyperparams:
        hp = replace(self.hyperparams, seed=seed)
        if self.steps is None:
            return hp
        batches_per_epoch = -(-size // hp.batch_size)
        return replace(hp, epochs=max(1, -(-self.steps // batches_per_epoch)))


@dataclass
class ExperimentResult:
    reports: list
    summary: list
    models: dict = field(default_factory=dict, repr=False)   # (kind, size, seed) -> Params
    histories: dict = field(default_factory=dict, repr=False)

    def report(self, kind: str, size: int, seed: int) -> ErrorReport:
        for r in self.reports:
            if (r.model, r.train_size, r.seed) == (kind, size, seed):
                return r
        raise KeyError((kind, size, seed))

    def median_of_medians(self, kind: str, size: int) -> float:
        return float(np.median([r.median for r in self.reports
                                if r.model == kind and r.train_size == size]))


def split_pool(dataset: Sequence, n_test: int):
    """The last ``n_test`` samples are the fixed test set; the rest are train-eligible."""
    if len(dataset) <= n_test:
        raise InvalidInputError(f"dataset of {len(dataset)} samples cannot hold {n_test} test samples")
    return list(dataset[:-n_test]), list(dataset[-n_test:])


def training_subset(eligible: Sequence, size: int, seed: int) -> list:
    rng = np.random.default_rng(np.random.SeedSequence([seed, size]))
    idx = np.sort(rng.choice(len(eligible), size=size, replace=False))
    return [eligible[i] for i in idx]


def run_experiment(spec: ExperimentSpec, dataset: Sequence, out_dir=None,
                   keep_models: bool = False, log=None) -> ExperimentResult:
    """Train every (model kind, train size, seed) cell and evaluate on the held-out set."""
    eligible, test = split_pool(dataset, spec.n_test)
    if max(spec.train_sizes) > len(eligible):
        raise InvalidInputError(
            f"largest train size {max(spec.train_sizes)} exceeds {len(eligible)} train-eligible samples")
    h, w = dataset[0].image.shape
    net = spec.net_config or NetConfig(height=h, width=w, n_landmarks=len(dataset[0].landmarks))

    reports, models, histories = [], {}, {}
    for size in spec.train_sizes:
        for seed in spec.seeds:
            subset = training_subset(eligible, size, seed)
            assert not {s.id for s in subset} & {s.id for s in test}, "train/test overlap"
            hp = spec.hyperparams_for(size, seed)
            for kind in spec.model_kinds:
                result = train(kind, subset, hp, replace(net, seed=seed))
                rep = evaluate(result.params, test, kind, size, seed)
                rep.train_ids = [s.id for s in subset]
                reports.append(rep)
                histories[(kind, size, seed)] = result.history
                if keep_models:
                    models[(kind, size, seed)] = result.params
                if log is not None:
                    log(f"{kind} size={size} seed={seed} median={rep.median:.3f} "
                        f"final_loss={result.history[-1]:.3g}")
    result = ExperimentResult(reports, summarize(reports), models, histories)
    if out_dir is not None:
        write_reports(result, out_dir, spec.thresholds)
    return result


def _scn_stacks(params: Params, samples: Sequence, batch_size: int = 16):
    if params.kind != "scn":
        raise InvalidInputError(f"component maps need an scn model, got {params.kind!r}")
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        out = scn_forward(params, batch_arrays(chunk))
        yield from zip(chunk, out.h_la.data, out.h_sc.data)


def appearance_predict(params: Params, samples: Sequence) -> np.ndarray:
    """Ablation: landmarks from the argmax of the appearance maps alone, ``(B, N, 2)``."""
    return np.stack([extract_landmarks(h_la) for _, h_la, _ in _scn_stacks(params, samples)])


def forcing_fraction(params: Params, samples: Sequence, level: float = 0.5) -> float:
    """Fraction of test landmarks where both component maps, read at the
    groundtruth pixel, exceed ``level`` times their own map maximum."""
    hits = total = 0
    for s, h_la, h_sc in _scn_stacks(params, samples):
        for i, (x, y) in enumerate(np.rint(s.landmarks).astype(int)):
            la, sc = h_la[i], h_sc[i]
            hits += bool(la[y, x] > level * la.max() and sc[y, x] > level * sc.max())
            total += 1
    return hits / total


def distractor_hits(pred, distractors, radius: float) -> np.ndarray:
    """Per landmark: is the prediction within ``radius`` of any distractor centre?"""
    p = as_landmarks(pred)
    d = np.asarray(distractors, dtype=np.float64).reshape(-1, 2)
    if d.size == 0:
        return np.zeros(len(p), dtype=bool)
    dist = np.hypot(p[:, None, 0] - d[None, :, 0], p[:, None, 1] - d[None, :, 1])
    return (dist <= radius).any(axis=1)


def mislocalization_rate(preds, samples: Sequence, radius: float) -> float:
    """Fraction of images with at least one landmark predicted on a distractor."""
    bad = [distractor_hits(p, s.distractors, radius).any() for p, s in zip(preds, samples)]
    return float(np.mean(bad))


def summarize(reports: Sequence[ErrorReport]) -> list:
    """One row per (model, train size); the median is the median of per-seed medians."""
    groups = {}
    for r in reports:
        groups.setdefault((r.model, r.train_size), []).append(r)
    rows = []
    for (model, size), reps in sorted(groups.items()):
        flat = np.concatenate([r.flat for r in reps])
        rows.append({
            "model": model,
            "train_size": size,
            "median_px": float(np.median([r.median for r in reps])),
            "mean_px": float(flat.mean()),
            "max_px": float(flat.max()),
            "outliers_gt_2px": int(np.count_nonzero(flat > OUTLIER_RADIUS)),
        })
    return rows


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def report_csv(reports: Sequence[ErrorReport]) -> str:
    out = io.StringIO()
    out.write("model,train_size,seed,image_id,landmark_index,error_px\n")
    for r in sorted(reports, key=lambda r: (r.model, r.train_size, r.seed)):
        for image_id, row in zip(r.image_ids, r.errors):
            for i, e in enumerate(row):
                out.write(f"{r.model},{r.train_size},{r.seed},{image_id},{i},{_fmt(e)}\n")
    return out.getvalue()


def ced_csv(reports: Sequence[ErrorReport], thresholds=DEFAULT_THRESHOLDS) -> str:
    out = io.StringIO()
    out.write("model,train_size,threshold_px,fraction\n")
    groups = {}
    for r in reports:
        groups.setdefault((r.model, r.train_size), []).append(r.flat)
    for (model, size), parts in sorted(groups.items()):
        curve = cumulative_error_distribution(np.concatenate(parts), thresholds)
        for t, f in zip(*curve):
            out.write(f"{model},{size},{_fmt(t)},{_fmt(f)}\n")
    return out.getvalue()


def summary_csv(rows: Sequence[dict]) -> str:
    cols = ["model", "train_size", "median_px", "mean_px", "max_px", "outliers_gt_2px"]
    out = io.StringIO()
    out.write(",".join(cols) + "\n")
    for row in rows:
        out.write(",".join(_fmt(row[c]) for c in cols) + "\n")
    return out.getvalue()


def write_reports(result: ExperimentResult, out_dir, thresholds=DEFAULT_THRESHOLDS) -> dict:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"report": d / "report.csv", "ced": d / "ced.csv", "summary": d / "summary.csv"}
    paths["report"].write_text(report_csv(result.reports))
    paths["ced"].write_text(ced_csv(result.reports, thresholds))
    paths["summary"].write_text(summary_csv(result.summary))
    return paths
