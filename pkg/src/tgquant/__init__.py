"""Token-group W4A4 post-training quantization with dual-constraint range projection."""

from .calibration import RadiusTable, calibrate_fixed_radii
from .diagnostics import (
    BoundaryProtocolConfig,
    DiagnosticsReport,
    boundary_band,
    build_report,
    classify_tokens,
    global_clip_factor,
    range_disparity,
    token_occupancy,
    zero_bin_mass,
)
from .quant_core import (
    GroupStats,
    GroupStatsTable,
    QuantConfig,
    base_radius,
    config_for_variant,
    dcrp_project,
    dstg_partition,
    group_std,
    quantize_activations,
    round_half_even,
    symmetric_qdq,
)
from .quant_layer import QuantLinearSpec, detokenize_4d, quant_linear_forward, tokenize_4d
from .synthgen import SynthSpec, generate
from .tensor_io import read_npy, write_npy
from .weight_quant import (
    PackedWeights,
    dequantize_weights,
    load_packed,
    pack_int4,
    pack_weights,
    quantize_weights,
    save_packed,
    unpack_int4,
)

__version__ = "0.1.0"
