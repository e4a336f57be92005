"""Event-camera streams, sparse encoders, and lifelong learning experiments."""

from .autodiff import Parameter, Tape, Tensor, backward
from .contrastive import (
    AugmentConfig,
    FeatureTable,
    ProjectionHead,
    augment,
    extract_features,
    linear_probe,
    load_feature_table,
    nt_xent_loss,
    pretrain,
    save_feature_table,
)
from .continual import (
    CilResult,
    EpisodeSchedule,
    HabituationState,
    MethodConfig,
    PRESETS,
    ReplayVAE,
    SIState,
    generate_replay,
    make_schedule,
    run_cil,
)
from .events import (
    DatasetManifest,
    Event,
    EventStream,
    ManifestEntry,
    parse_evs1,
    random_window,
    read_evs1_file,
    read_manifest,
    write_evs1,
    write_evs1_file,
    write_manifest,
)
from .harness import ExperimentConfig, aggregate, load_config, parse_config
from .histograms import (
    PolarityHistogram,
    SparseGrid,
    build_histogram,
    densify,
    normalize_histogram,
    to_sparse_grid,
)
from .optim import AdamState, adam_step, load_checkpoint, save_checkpoint, sgd_step
from .sparse import (
    RuleBook,
    SparseConvLayer,
    SparseEncoder,
    build_rulebook,
    sparse_global_pool,
    submanifold_conv,
)
from .synth import EsimConfig, SaccadePath, SceneSpec, frames_to_events, gen_dataset, synth_stream

__version__ = "0.1.0"
