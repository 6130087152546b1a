"""Binary subnetwork search on frozen random weights."""

from ._core import (  # noqa: F401
    ConfigError,
    DimensionError,
    Error,
    FormatError,
    IoError,
    PackedLayer,
    ParameterError,
    PreconditionError,
    cosine_lr,
    evaluate,
    find,
    list_presets,
    matmul_masked_binary,
    pack,
    pack_checkpoint,
    pruned_count,
    recompute_gain,
    recompute_mask,
    resolve_config,
    spline_grad,
    spline_value,
    ste_mask_grad,
    theory,
)
