"""Factorized transport alignment for multi-view multimodal retrieval.

Fuses multiple views per modality into a single cached embedding via a
fixed rank-one transport coupling, trains small encoders with a
rolling-sampling contrastive objective whose per-step cost is constant in
the number of views, and evaluates retrieval over exact cosine k-NN.
"""

from .datagen import (
    Interaction,
    Listing,
    PseudoQueryProvider,
    SyntheticConfig,
    TitleJitterProvider,
    generate_catalog,
    generate_interactions,
    load_dataset,
    serialize_dataset,
)
from .encoder import (
    EncoderConfig,
    EncoderPair,
    EncoderParams,
    GradientBuffer,
    encode,
    encode_backward,
    encode_batch,
    init_params,
    load_model,
    save_model,
)
from .errors import (
    ConfigError,
    DimensionMismatchError,
    EmptyIndexError,
    EmptySimplexError,
    FormatError,
    FtalignError,
    InfeasibleMarginalsError,
    MissingViewError,
    NegativeEntryError,
    NotNormalizedError,
    NumericalFailureError,
    TooFewViewsError,
    UnknownListingError,
    ZeroNormError,
)
from .fusion import (
    ViewSet,
    WeightScheme,
    design_weights,
    fuse,
    fuse_multimodal,
    fuse_rolled,
)
from .index import (
    EmbeddingIndex,
    EvalReport,
    build_index,
    cross_view_eval,
    knn,
    load_index,
    recall_at_k,
    save_index,
)
from .training import (
    AdamState,
    BatchSample,
    TrainConfig,
    TrainStats,
    adam_step,
    build_batch,
    clip_infonce_loss,
    default_encoders,
    estimate_unbiasedness,
    loss_backward,
    sample_rolling,
    train,
)
from .transport import (
    Coupling,
    bilinear_fused_similarity,
    coupling_cost,
    exact_ot,
    factorized_coupling,
    negative_dot_cost,
    validate_simplex,
)

__version__ = "0.1.0"
