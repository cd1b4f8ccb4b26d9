"""Style-randomization training mechanism: python surface of the C++ core."""

from sagnet._core import (
    Model,
    adain,
    batch_shuffle,
    channel_stats,
    content_randomize,
    load_model,
    make_cue_conflict,
    make_holdout,
    proxy_a_distance,
    run_training_cell,
    style_randomize,
)

__all__ = [
    "Model",
    "adain",
    "batch_shuffle",
    "channel_stats",
    "content_randomize",
    "load_model",
    "make_cue_conflict",
    "make_holdout",
    "proxy_a_distance",
    "run_training_cell",
    "style_randomize",
]

__version__ = "0.1.0"
