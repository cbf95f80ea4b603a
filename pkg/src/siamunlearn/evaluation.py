"""Accuracy splits, entropy MIA, augmented-view KL dispersion and PCA export."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .augment import AugPipeline, augment_batch
from .core.tensor import Tensor, no_grad, softmax
from .datasets import DatasetSplit, LabeledDataset
from .errors import MetricError
from .models import Network

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("method", "scenario", "seed", "acc_dr", "acc_df", "ta", "ta_dr", "ta_df",
                  "mia", "kl_dr", "kl_df", "runtime_seconds")


def network_logits(net: Network, images: np.ndarray, batch_size: int = 256,
                   dtype=np.float64) -> np.ndarray:
    """Eval-mode backbone logits. Runs on a ``dtype`` copy, leaving ``net`` untouched."""
    model = net.copy().to_dtype(dtype)
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            x = np.asarray(images[start:start + batch_size], dtype=dtype)
            out.append(model(Tensor(x)).data)
    if not out:
        return np.zeros((0, net.class_count), dtype=dtype)
    return np.concatenate(out)


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        raise MetricError("accuracy of an empty set is undefined")
    # argmax returns the lowest index on ties
    return 100.0 * float(np.mean(np.argmax(logits, axis=1) == labels))


def accuracy(net: Network, ds: LabeledDataset, index_set) -> float:
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise MetricError("accuracy of an empty set is undefined")
    return accuracy_from_logits(network_logits(net, ds.images[idx]), ds.labels[idx])


def entropy_from_logits(logits: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each row's softmax."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(logp)
    return np.maximum(-(p * logp).sum(axis=-1), 0.0)


def prediction_entropy(net: Network, image: np.ndarray) -> float:
    return float(entropy_from_logits(network_logits(net, image[None]))[0])


# ------------------------------------------------------------------------- MIA

@dataclass
class MiaAttacker:
    """Logistic regression on one standardised feature, the prediction entropy."""

    weight: float = 0.0
    bias: float = 0.0
    feature_mean: float = 0.0
    feature_std: float = 1.0
    validation_accuracy: float = float("nan")
    degenerate: bool = False
    majority: int = 1
    iterations: int = 500
    learning_rate: float = 0.1

    def fit(self, entropies: np.ndarray, members: np.ndarray) -> MiaAttacker:
        x = np.asarray(entropies, dtype=np.float64)
        y = np.asarray(members, dtype=np.float64)
        self.majority = int(y.mean() >= 0.5)
        self.feature_mean = float(x.mean())
        std = float(x.std())
        if std == 0.0 or len(np.unique(y)) < 2:
            warnings.warn("membership attacker fit on a single-valued feature; "
                          "falling back to the majority class", RuntimeWarning, stacklevel=2)
            self.degenerate = True
            return self
        self.feature_std = std
        z = (x - self.feature_mean) / std
        w = b = 0.0
        for _ in range(self.iterations):
            p = 1.0 / (1.0 + np.exp(-(w * z + b)))
            err = p - y
            w -= self.learning_rate * float(np.mean(err * z))
            b -= self.learning_rate * float(np.mean(err))
        self.weight, self.bias = w, b
        return self

    @property
    def sign(self) -> int:
        """-1 when higher entropy means less likely a member (the usual case)."""
        return int(np.sign(self.weight))

    def predict(self, entropies: np.ndarray) -> np.ndarray:
        x = np.asarray(entropies, dtype=np.float64)
        if self.degenerate:
            return np.full(x.shape, self.majority, dtype=np.int64)
        z = (x - self.feature_mean) / self.feature_std
        return (self.weight * z + self.bias >= 0.0).astype(np.int64)


def fit_mia_attacker(member_entropy: np.ndarray, nonmember_entropy: np.ndarray,
                     seed: int) -> MiaAttacker:
    """Balanced member/non-member sample, 80/20 fit/validation split."""
    rng = np.random.default_rng([seed, 0x31A])
    n = min(len(member_entropy), len(nonmember_entropy))
    if n == 0:
        raise MetricError("membership attack needs non-empty member and non-member sets")
    mem = rng.choice(member_entropy, size=n, replace=False)
    non = rng.choice(nonmember_entropy, size=n, replace=False)
    x = np.concatenate([mem, non])
    y = np.concatenate([np.ones(n), np.zeros(n)])
    order = rng.permutation(2 * n)
    x, y = x[order], y[order]
    cut = max(1, int(round(0.8 * len(x)))) if len(x) > 1 else 1
    attacker = MiaAttacker().fit(x[:cut], y[:cut])
    if cut < len(x):
        attacker.validation_accuracy = 100.0 * float(np.mean(attacker.predict(x[cut:]) == y[cut:]))
    return attacker


def mia_score_from_entropy(member_entropy, nonmember_entropy, forget_entropy, seed: int) -> float:
    if len(forget_entropy) == 0:
        raise MetricError("membership attack needs a non-empty forget set")
    attacker = fit_mia_attacker(np.asarray(member_entropy), np.asarray(nonmember_entropy), seed)
    return 100.0 * float(np.mean(attacker.predict(np.asarray(forget_entropy))))


def mia_score(net: Network, member_set: np.ndarray, nonmember_set: np.ndarray,
              forget_set: np.ndarray, seed: int) -> float:
    """Percentage of ``forget_set`` images the attacker labels as training members.

    The attacker learns to tell ``member_set`` images (retained training
    data) from ``nonmember_set`` images (test data) by prediction entropy.
    """
    ent = [entropy_from_logits(network_logits(net, s)) for s in (member_set, nonmember_set, forget_set)]
    return mia_score_from_entropy(*ent, seed=seed)


# ------------------------------------------------------------------------- KL

def kl_to_mean(probs: np.ndarray) -> float:
    """Mean over views of ``KL(p_v || mean_v p_v)`` for one example's (V, K) softmaxes."""
    p = np.asarray(probs, dtype=np.float64)
    pbar = p.mean(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(pbar)), 0.0)
    return float(terms.sum(axis=1).mean())


def kl_dispersion(net: Network, ds: LabeledDataset, index_set, pipeline: AugPipeline,
                  views_per_example: int = 100, seed: int = 0) -> float:
    """Average augmented-view dispersion (KL to the per-example mean) over ``index_set``."""
    if views_per_example < 2:
        raise MetricError(f"views_per_example must be at least 2, got {views_per_example}")
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise MetricError("KL dispersion of an empty set is undefined")
    pipe = pipeline.with_seed(seed)
    per_example = []
    for i in idx:
        views = np.stack([augment_batch(pipe, ds.images[i:i + 1], [i], v, 0)[0]
                          for v in range(views_per_example)])
        per_example.append(kl_to_mean(softmax(network_logits(net, views))))
    return float(np.mean(per_example))


# ------------------------------------------------------------------------- PCA

@dataclass
class Projection:
    coords: np.ndarray  # (N, 2)
    components: np.ndarray  # (2, D)
    explained_variance_ratio: np.ndarray  # (2,)
    rank_deficient: bool


def project_2d(matrix: np.ndarray, tol: float = 1e-10) -> Projection:
    """Scores on the top two principal components of the mean-centred rows.

    Each component's sign is fixed so its largest-magnitude loading is
    positive. When the data span fewer than two directions the second
    component and its scores are zero and ``rank_deficient`` is set.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise MetricError(f"projection needs at least 3 rows, got shape {x.shape}")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    comps = np.zeros((2, x.shape[1]))
    ratios = np.zeros(2)
    scale = max(evals[0], 1.0) if evals.size else 1.0
    deficient = False
    for j in range(min(2, x.shape[1])):
        if evals[j] <= tol * scale:
            deficient = True
            continue
        v = evecs[:, j]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps[j] = v
        ratios[j] = evals[j] / total if total > 0 else 0.0
    if x.shape[1] < 2:
        deficient = True
    return Projection(centred @ comps.T, comps, ratios, deficient)


# --------------------------------------------------------------------- report

@dataclass
class MetricsReport:
    method: str
    scenario: str
    seed: int
    acc_dr: float
    acc_df: float
    ta: float
    ta_dr: float
    ta_df: float
    mia: float
    kl_dr: float
    kl_df: float
    runtime_seconds: float = 0.0
    config_hash: str = field(default="", compare=False)

    def row(self) -> list:
        return [getattr(self, c) for c in REPORT_COLUMNS]

    def to_json(self) -> str:
        data = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}
        return json.dumps(data, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> MetricsReport:
        data = json.loads(text)
        floats = {f.name for f in fields(cls) if f.type in ("float", float)}
        return cls(**{k: (float("nan") if v is None and k in floats else v) for k, v in data.items()})

    def values(self) -> dict:
        """Every field except runtime, for determinism comparisons (NaN becomes None)."""
        out = asdict(self)
        out.pop("runtime_seconds")
        return {k: None if isinstance(v, float) and math.isnan(v) else v for k, v in out.items()}


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def report_csv_header() -> str:
    return ",".join(REPORT_COLUMNS)


def report_csv_row(report: MetricsReport) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow([_fmt(v) for v in report.row()])
    return buf.getvalue()


def parse_report_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    for row in rows:
        for key in REPORT_COLUMNS[3:]:
            row[key] = float(row[key]) if row[key] != "" else float("nan")
        row["seed"] = int(row["seed"])
    return rows


def format_table(reports: list[MetricsReport]) -> str:
    """Aligned text table with exactly the CSV columns."""
    cells = [list(REPORT_COLUMNS)]
    for r in reports:
        cells.append([f"{v:.2f}" if isinstance(v, float) and not math.isnan(v)
                      else ("-" if isinstance(v, float) else str(v)) for v in r.row()])
    widths = [max(len(row[j]) for row in cells) for j in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)


@dataclass
class EvalSettings:
    kl_views: int = 100
    kl_examples: int = 50
    mia_seed: int = 0


def evaluate_network(net: Network, train: LabeledDataset, test: LabeledDataset, split: DatasetSplit,
                     aug: AugPipeline, method: str, scenario: str, seed: int,
                     settings: EvalSettings | None = None, runtime_seconds: float = 0.0,
                     config_hash: str = "") -> MetricsReport:
    settings = settings or EvalSettings()
    train_logits = network_logits(net, train.images)
    test_logits = network_logits(net, test.images)
    f, r = split.forget_indices, split.retain_indices
    acc_df = accuracy_from_logits(train_logits[f], train.labels[f])
    acc_dr = accuracy_from_logits(train_logits[r], train.labels[r])
    ta = accuracy_from_logits(test_logits, test.labels)
    forgetting_classes = split.scenario.forgetting_classes() if split.scenario else ()
    ta_dr = ta_df = float("nan")
    if forgetting_classes:
        in_f = np.isin(test.labels, forgetting_classes)
        if in_f.any():
            ta_df = accuracy_from_logits(test_logits[in_f], test.labels[in_f])
        if (~in_f).any():
            ta_dr = accuracy_from_logits(test_logits[~in_f], test.labels[~in_f])

    ent_train = entropy_from_logits(train_logits)
    ent_test = entropy_from_logits(test_logits)
    mia = mia_score_from_entropy(ent_train[r], ent_test, ent_train[f], settings.mia_seed)

    rng = np.random.default_rng([seed, 0x4B1])
    kl_f_idx = np.sort(rng.choice(f, size=min(settings.kl_examples, len(f)), replace=False))
    kl_r_idx = np.sort(rng.choice(r, size=min(settings.kl_examples, len(r)), replace=False))
    kl_df = kl_dispersion(net, train, kl_f_idx, aug, settings.kl_views, seed)
    kl_dr = kl_dispersion(net, train, kl_r_idx, aug, settings.kl_views, seed)
    return MetricsReport(method, scenario, seed, acc_dr, acc_df, ta, ta_dr, ta_df, mia,
                         kl_dr, kl_df, runtime_seconds, config_hash)
