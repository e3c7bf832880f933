"""Edge-guided post-processing for self-supervised monocular disparity, with
the evaluation, loss, synthetic-scene and encoder-description tooling around it."""

from .edge_guided import (
    MODES,
    ConfigError,
    PPConfig,
    boundary_masks,
    build_gradient_filter,
    conventional_pp,
    edge_confidence,
    edge_guided_combine,
    edge_guided_pp,
    gradient_response,
    normalize_weights,
    post_process,
    synthesize,
)
from .grid import GridError, correlate2d, flip_horizontal, resize_bilinear

__version__ = "0.1.0"
