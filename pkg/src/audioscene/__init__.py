"""Sound-to-image generation by aligning audio embeddings to a frozen visual space."""

from .alignment import (
    AlignmentBatch,
    AudioVisualAligner,
    TrainConfig,
    info_nce,
    l2_loss,
    nce_cosine_loss,
    pairwise_distance,
    total_loss,
    train,
)
from .audio import (
    LogSpectrogram,
    Waveform,
    compute_log_spectrogram,
    load_and_standardize,
    mix,
    scale_volume,
)
from .encoders import (
    AudioEncoder,
    Embedding,
    EncoderConfig,
    ImageEncoder,
    TemporalFeatureSequence,
    build_encoders,
    normalize,
)
from .evaluation import (
    ClassPrototypeSpace,
    EvalReport,
    frechet_distance,
    inception_style_score,
    recall_at_k,
    run_ablation_grid,
)
from .generation import (
    ConditionalImageDecoder,
    GeneratedImage,
    GeneratorLatent,
    RetrievalIndex,
    generate,
    invert,
    retrieve,
    train_toy_decoder,
)
from .latent_ops import direction_edit, interpolate, volume_direction
from .manifest import (
    ClipRecord,
    PairManifest,
    annotate_selected_frames,
    ingest_directory,
    load_manifest,
    save_manifest,
)
from .pair_selection import correlation_trace, select_training_frames, top_k_moments

__version__ = "0.1.0"
