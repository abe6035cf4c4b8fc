"""Room classification for 3D scene graphs.

Infers a room's semantic label (kitchen, bathroom, ...) from the objects it
contains, using object-room co-occurrence statistics and language-model
scoring or embeddings. See README.md for the full tour.
"""

from .classifiers import (
    ClassificationResult,
    EmbeddingRoomClassifier,
    StatisticalRoomClassifier,
    ZeroShotRoomClassifier,
    classify_embedding,
    classify_statistical,
    classify_zero_shot,
    train_embedding_head,
)
from .cooccurrence import (
    CooccurrenceTable,
    InformativenessIndex,
    SelectionConfig,
    build_index,
    build_proxy_table,
    conditional_gt,
    conditional_proxy,
    count_cooccurrences,
    entropy,
    select_informative,
)
from .errors import (
    AuthError,
    BackendError,
    ConfigError,
    DegenerateScoreError,
    InputError,
    ParseError,
    ProtocolError,
    SceneSenseError,
    TrainingDivergedError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    HoldoutReport,
    SplitSpec,
    evaluate,
    holdout_experiment,
    split_rooms,
    transfer_experiment,
)
from .lm_backend import (
    HashEmbedder,
    HashScorer,
    HttpEmbedder,
    HttpScorer,
    TableEmbedder,
    TableScorer,
    hash_embedder,
    http_embedder,
    http_scorer,
    mock_scorer_from_conditionals,
)
from .mlp import MlpHead, TrainConfig, train_classifier
from .query import (
    QueryBundle,
    StructuredStringConfig,
    bootstrap_queries,
    render_embedding,
    render_structured,
    render_zero_shot,
)
from .scene_graph import (
    LabelSpace,
    ObjectNode,
    RoomNode,
    RoomView,
    SceneGraph,
    filter_objects,
    load_scene_graph,
    preprocess,
    reassign_objects,
    remap_label_space,
    save_scene_graph,
)

__version__ = "0.1.0"
