"""extlab: a numerical laboratory for Fourier extension operators.

Surfaces, fractal weights and measures, oscillatory-sum evaluation, wave
packets, polynomial partitioning, parabolic rescaling, and reproducible
log-log scaling experiments.
"""

from .geometry import (
    Cap,
    CapCover,
    HeightFunction,
    Polynomial2D,
    SurfaceGraph,
    build_surface,
    cap_cover,
    cap_normal,
    paraboloid_height,
    parse_height_spec,
)
from .extension import (
    AmplitudeFunction,
    GridFunction,
    exponential_sum_eval,
    extension_eval,
    extension_eval_cube,
    grid_axes,
    r_separated_caps,
    restriction_eval,
    spherical_means,
    weighted_lp_norm,
)
from .measures import (
    DimensionReport,
    FractalMeasure,
    Weight,
    cantor_product_measure,
    energy_fourier_check,
    energy_I_alpha,
    estimate_A_alpha,
    estimate_C_alpha,
    fourier_transform,
    make_weight,
    riesz_constant,
    weight_from_measure,
    wolff_decompose,
)

from .scaling import (
    ExponentTable,
    ParabolicMap,
    ScalingFit,
    exponents,
    fit_scaling,
    parabolic_map,
    parabolic_rescale,
    pushforward_A_bound,
    pushforward_weight,
    rescaled_height,
    weight_factor,
)

from .wavepacket import (
    FrequencyPartition,
    Tube,
    WavePacket,
    WavePacketConfig,
    WavePacketSet,
    decompose,
    frequency_partition,
    off_tube_decay,
)

from .partition import (
    BroadConfig,
    Partition,
    TriPoly,
    TubeClassification,
    bilinear_tangential,
    broad_part,
    classify_tubes,
    equidistribute,
    line_cell_crossings,
    tangential_direction_count,
    tube_cell_membership,
)

from .lab import (
    ExperimentConfig,
    RunRecord,
    lambda_class_draw,
    render_figure,
    run_experiment,
    run_expsum_sharpness,
    run_partition_demo,
    run_spherical_means,
    run_wavepacket_demo,
    run_weighted_scaling,
    write_outputs,
)

__all__ = [
    "AmplitudeFunction",
    "BroadConfig",
    "Cap",
    "CapCover",
    "DimensionReport",
    "ExperimentConfig",
    "ExponentTable",
    "FractalMeasure",
    "FrequencyPartition",
    "GridFunction",
    "HeightFunction",
    "ParabolicMap",
    "Partition",
    "Polynomial2D",
    "RunRecord",
    "ScalingFit",
    "SurfaceGraph",
    "TriPoly",
    "Tube",
    "TubeClassification",
    "WavePacket",
    "WavePacketConfig",
    "WavePacketSet",
    "Weight",
    "bilinear_tangential",
    "broad_part",
    "build_surface",
    "cantor_product_measure",
    "cap_cover",
    "cap_normal",
    "classify_tubes",
    "decompose",
    "energy_I_alpha",
    "energy_fourier_check",
    "equidistribute",
    "estimate_A_alpha",
    "estimate_C_alpha",
    "exponential_sum_eval",
    "exponents",
    "extension_eval",
    "extension_eval_cube",
    "fit_scaling",
    "fourier_transform",
    "frequency_partition",
    "grid_axes",
    "lambda_class_draw",
    "line_cell_crossings",
    "make_weight",
    "off_tube_decay",
    "parabolic_map",
    "parabolic_rescale",
    "paraboloid_height",
    "parse_height_spec",
    "pushforward_A_bound",
    "pushforward_weight",
    "r_separated_caps",
    "render_figure",
    "rescaled_height",
    "restriction_eval",
    "riesz_constant",
    "run_experiment",
    "run_expsum_sharpness",
    "run_partition_demo",
    "run_spherical_means",
    "run_wavepacket_demo",
    "run_weighted_scaling",
    "spherical_means",
    "tangential_direction_count",
    "tube_cell_membership",
    "weight_factor",
    "weight_from_measure",
    "weighted_lp_norm",
    "wolff_decompose",
    "write_outputs",
]

__version__ = "0.1.0"
