"""Room classifiers: score-argmax, statistical baseline, embedding head.

Three methods share one result shape and one argmax convention
(lexicographically smallest label wins ties, and the full score map is
always returned so callers can inspect near-ties):

  * zero-shot: render one query sentence per room label, score each with a
    language model, take the argmax.
  * statistical: sum log p(room | object) over the room's distinct object
    labels from a co-occurrence table (a naive-Bayes style product).
  * embedding: embed a room description sentence and take the argmax logit
    of a trained MLP head.

Each method is exposed both as a function and as an sklearn-style
estimator with fit/predict/get_params, so the classifiers compose with
standard model-selection tooling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .cooccurrence import (
    COUNT_MODES,
    CooccurrenceTable,
    InformativenessIndex,
    SelectionConfig,
    build_index,
    count_cooccurrences,
    sum_log_conditionals,
)
from .errors import ConfigError, DegenerateScoreError, ValidationError
from .lm_backend import LmScorer, TextEmbedder
from .mlp import MlpHead, TrainConfig, TrainingCurve, train_classifier
from .query import (
    DEFAULT_BOOTSTRAP_SCHEDULE,
    BootstrapRow,
    bootstrap_queries,
    embedding_query,
    render_zero_shot,
)
from .scene_graph import LabelSpace, RoomView
from .validation import check_choice

ZERO_SHOT = "zero_shot"
STATISTICAL = "statistical"
EMBEDDING = "embedding"


@dataclass(frozen=True)
class ClassificationResult:
    room_id: str
    method: str
    scores: dict[str, float]
    predicted: str
    objects_used: tuple[str, ...]
    tie: bool = False

    def to_dict(self) -> dict:
        return {
            "room_id": self.room_id,
            "method": self.method,
            "scores": {k: _json_float(v) for k, v in self.scores.items()},
            "predicted": self.predicted,
            "objects_used": list(self.objects_used),
            "tie": self.tie,
        }


def _json_float(v: float):
    return v if math.isfinite(v) else repr(v)


def results_to_jsonl(results: Iterable[ClassificationResult]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in results)


def argmax_label(scores: dict[str, float]) -> tuple[str, bool]:
    """Highest-scoring label; exact ties resolve to the lexicographically
    smallest and are flagged. All scores at -inf is a degenerate case."""
    best = max(scores.values())
    if best == -math.inf:
        raise DegenerateScoreError("every label scored -inf; no prediction is meaningful")
    winners = sorted(label for label, s in scores.items() if s == best)
    return winners[0], len(winners) > 1


# ---------------------------------------------------------------------------
# Method functions


def classify_zero_shot(
    view: RoomView,
    scorer: LmScorer,
    index: InformativenessIndex,
    selection: SelectionConfig,
    space: LabelSpace,
) -> ClassificationResult:
    """Score one query sentence per room label and take the argmax."""
    chosen = index.select(view.object_labels, selection.k, selection.tie_break)
    bundle = render_zero_shot(chosen, space, room_id=view.room_id)
    ordered_labels = list(space.room_labels)
    raw = scorer.batch_score([bundle.strings[r] for r in ordered_labels])
    scores = dict(zip(ordered_labels, (float(s) for s in raw)))
    predicted, tie = argmax_label(scores)
    return ClassificationResult(
        room_id=view.room_id,
        method=ZERO_SHOT,
        scores=scores,
        predicted=predicted,
        objects_used=tuple(chosen),
        tie=tie,
    )


def classify_statistical(
    view: RoomView, table: CooccurrenceTable, mode: str = "presence"
) -> ClassificationResult:
    """Sum log p(room | object) over the room's object labels.

    Presence mode uses distinct labels; multiplicity mode weights repeated
    labels. Labels are summed in sorted order so the result is exactly
    invariant to object ordering.
    """
    check_choice(mode, COUNT_MODES, "mode")
    if not view.object_labels:
        raise ValidationError(f"room {view.room_id!r} has no objects")
    labels = view.distinct_labels if mode == "presence" else view.object_labels
    labels = sorted(labels)
    room_labels = table.label_space.room_labels
    totals = sum_log_conditionals(table, labels)
    scores = dict(zip(room_labels, totals.tolist()))
    predicted, tie = argmax_label(scores)
    return ClassificationResult(
        room_id=view.room_id,
        method=STATISTICAL,
        scores=scores,
        predicted=predicted,
        objects_used=tuple(labels),
        tie=tie,
    )


def train_embedding_head(
    rows: Sequence[BootstrapRow | tuple[str, str]],
    embedder: TextEmbedder,
    room_labels: Sequence[str],
    cfg: TrainConfig = TrainConfig(),
    hidden_sizes: Sequence[int] = (256,),
    val_rows: Sequence[BootstrapRow | tuple[str, str]] | None = None,
) -> tuple[MlpHead, TrainingCurve]:
    """Embed (text, label) rows and train an MLP head over them."""
    if not rows:
        raise ValidationError("no training rows")
    label_index = {r: i for i, r in enumerate(room_labels)}

    def embed_rows(items):
        texts, labels = [], []
        for row in items:
            text, label = (row.text, row.label) if isinstance(row, BootstrapRow) else row
            if label not in label_index:
                raise ValidationError(f"row label {label!r} not among room labels")
            texts.append(text)
            labels.append(label_index[label])
        x = np.asarray(embedder.embed_batch(texts), dtype=float)
        return x, np.asarray(labels, dtype=int)

    x, y = embed_rows(rows)
    x_val = y_val = None
    if val_rows:
        x_val, y_val = embed_rows(val_rows)
    dims = [x.shape[1], *hidden_sizes, len(room_labels)]
    return train_classifier(x, y, dims, cfg, x_val=x_val, y_val=y_val)


def classify_embedding(
    view: RoomView,
    embedder: TextEmbedder,
    head: MlpHead,
    index: InformativenessIndex,
    selection: SelectionConfig,
    room_labels: Sequence[str],
) -> ClassificationResult:
    """Embed the room description and take the argmax logit of the head."""
    if len(room_labels) != head.output_dim:
        raise ValidationError(f"head emits {head.output_dim} logits for {len(room_labels)} labels")
    chosen = index.select(view.object_labels, selection.k, selection.tie_break)
    vec = np.asarray(embedder.embed(embedding_query(chosen)), dtype=float)
    if vec.shape != (head.input_dim,):
        raise ValidationError(
            f"embedder produced dimension {vec.shape}, head expects {head.input_dim}"
        )
    logits = head.logits(vec)[0]
    scores = dict(zip(room_labels, logits.tolist()))
    predicted, tie = argmax_label(scores)
    return ClassificationResult(
        room_id=view.room_id,
        method=EMBEDDING,
        scores=scores,
        predicted=predicted,
        objects_used=tuple(chosen),
        tie=tie,
    )


# ---------------------------------------------------------------------------
# sklearn-style estimators


class _RoomEstimator(BaseEstimator):
    """Common predict plumbing over classify(view)."""

    def classify(self, view: RoomView) -> ClassificationResult:  # pragma: no cover - abstract
        raise NotImplementedError

    def classify_all(self, views: Iterable[RoomView]) -> list[ClassificationResult]:
        return [self.classify(v) for v in views]

    def predict(self, X: Iterable[RoomView]) -> list[str]:
        return [self.classify(v).predicted for v in X]

    def predict_scores(self, X: Iterable[RoomView]) -> list[dict[str, float]]:
        return [self.classify(v).scores for v in X]


class ZeroShotRoomClassifier(_RoomEstimator):
    """Training-free classifier: language-model scores over label queries.

    Parameters
    ----------
    scorer : LmScorer
        Backend scoring strings (higher = more probable).
    index : InformativenessIndex
        Per-object entropies used to pick the most informative objects.
    label_space : LabelSpace
        Supplies the candidate room labels.
    k : int
        Objects per query.
    tie_break : str
        "lexicographic" or "stable_input_order" for equal entropies.
    """

    def __init__(self, scorer=None, index=None, label_space=None, k=3, tie_break="lexicographic"):
        self.scorer = scorer
        self.index = index
        self.label_space = label_space
        self.k = k
        self.tie_break = tie_break

    def _require_configured(self):
        for name in ("scorer", "index", "label_space"):
            if getattr(self, name) is None:
                raise ConfigError(f"ZeroShotRoomClassifier needs {name}")

    def fit(self, X=None, y=None):
        """No training; validates wiring and returns self."""
        self._require_configured()
        self.classes_ = list(self.label_space.room_labels)
        return self

    def classify(self, view: RoomView) -> ClassificationResult:
        self._require_configured()
        selection = SelectionConfig(k=self.k, tie_break=self.tie_break)
        return classify_zero_shot(view, self.scorer, self.index, selection, self.label_space)


class StatisticalRoomClassifier(_RoomEstimator, ClassifierMixin):
    """Naive-Bayes style baseline over object-room co-occurrence counts."""

    def __init__(self, label_space=None, alpha=1.0, count_mode="presence", tie_break="lexicographic"):
        self.label_space = label_space
        self.alpha = alpha
        self.count_mode = count_mode
        self.tie_break = tie_break

    def fit(self, X: Sequence[RoomView], y: Sequence[str] | None = None):
        """Count co-occurrences from labeled views (y overrides view labels)."""
        if self.label_space is None:
            raise ConfigError("StatisticalRoomClassifier needs label_space")
        views = list(X)
        if y is not None:
            if len(y) != len(views):
                raise ValidationError(f"{len(views)} views but {len(y)} labels")
            views = [replace(v, label=label) for v, label in zip(views, y)]
        self.table_ = count_cooccurrences(views, self.label_space, mode=self.count_mode, alpha=self.alpha)
        self.index_ = build_index(self.table_)
        self.classes_ = list(self.label_space.room_labels)
        return self

    @classmethod
    def from_table(cls, table: CooccurrenceTable, count_mode="presence", tie_break="lexicographic"):
        est = cls(
            label_space=table.label_space,
            alpha=table.alpha,
            count_mode=count_mode,
            tie_break=tie_break,
        )
        est.table_ = table
        est.index_ = build_index(table)
        est.classes_ = list(table.label_space.room_labels)
        return est

    def classify(self, view: RoomView) -> ClassificationResult:
        if not hasattr(self, "table_"):
            raise ConfigError("StatisticalRoomClassifier is not fitted")
        return classify_statistical(view, self.table_, mode=self.count_mode)


class EmbeddingRoomClassifier(_RoomEstimator, ClassifierMixin):
    """Embeds room descriptions and trains an MLP head over the embeddings.

    fit() expands labeled views with the permutation bootstrap before
    training; fit_rows() accepts pre-built (text, label) rows, which is how
    the holdout experiment injects its filtered training set.
    """

    def __init__(
        self,
        embedder=None,
        index=None,
        label_space=None,
        k=3,
        tie_break="lexicographic",
        hidden_sizes=(256,),
        train_config=None,
        bootstrap_schedule=DEFAULT_BOOTSTRAP_SCHEDULE,
    ):
        self.embedder = embedder
        self.index = index
        self.label_space = label_space
        self.k = k
        self.tie_break = tie_break
        self.hidden_sizes = hidden_sizes
        self.train_config = train_config
        self.bootstrap_schedule = bootstrap_schedule

    def _require_configured(self):
        for name in ("embedder", "index", "label_space"):
            if getattr(self, name) is None:
                raise ConfigError(f"EmbeddingRoomClassifier needs {name}")

    def bootstrap(self, views: Iterable[RoomView]) -> list[BootstrapRow]:
        self._require_configured()
        rows: list[BootstrapRow] = []
        for view in views:
            rows.extend(bootstrap_queries(view, self.index, self.bootstrap_schedule, self.tie_break))
        return rows

    def fit(self, X: Sequence[RoomView], y=None, val_views: Sequence[RoomView] | None = None):
        views = list(X)
        if y is not None:
            views = [replace(v, label=label) for v, label in zip(views, y)]
        val_rows = self.bootstrap(val_views) if val_views else None
        return self.fit_rows(self.bootstrap(views), val_rows=val_rows)

    def fit_rows(self, rows: Sequence[BootstrapRow | tuple[str, str]], val_rows=None):
        self._require_configured()
        cfg = self.train_config or TrainConfig()
        self.head_, self.curve_ = train_embedding_head(
            rows,
            self.embedder,
            self.label_space.room_labels,
            cfg=cfg,
            hidden_sizes=self.hidden_sizes,
            val_rows=val_rows,
        )
        self.classes_ = list(self.label_space.room_labels)
        return self

    def classify(self, view: RoomView) -> ClassificationResult:
        if not hasattr(self, "head_"):
            raise ConfigError("EmbeddingRoomClassifier is not fitted (no trained head)")
        selection = SelectionConfig(k=self.k, tie_break=self.tie_break)
        return classify_embedding(
            view, self.embedder, self.head_, self.index, selection, self.label_space.room_labels
        )
