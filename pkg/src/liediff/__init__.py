"""Score-based diffusion on SO(3), R3xSO(3) and SE(3) pose distributions."""

from liediff.diffusion import (
    NoiseSchedule,
    TrainConfig,
    geodesic_walk,
    make_schedule,
    sample,
    sample_batch,
    subsample_schedule,
    train,
    truncate_schedule,
)
from liediff.distributions import (
    concentrated_logprob,
    concentrated_sample,
    igso3_density,
    igso3_sample,
)
from liediff.eval_viz import (
    EvalReport,
    build_report,
    mode_coverage,
    mollweide_export,
    rotation_spread,
    translation_error,
)
from liediff.lie_core import (
    ParamMode,
    RigidTransform,
    Rotation,
    SingularityError,
    compose,
    group_exp,
    group_log,
    inverse,
    se3_jacobian_inv,
    se3_q_matrix,
    so3_exp,
    so3_jacobian,
    so3_log,
    tangent_dim,
)
from liediff.score_net import (
    ScoreNetParams,
    init_params,
    load_params,
    net_forward,
    net_forward_batch,
    save_params,
)
from liediff.scores import (
    score_closed,
    score_numerical,
    score_simplified,
    score_surrogate,
    score_true_se3,
)
from liediff.symsol_synth import (
    SHAPES,
    DatasetHeader,
    PoseSample,
    SymmetrySpec,
    equivalent_distance,
    gen_dataset,
    gen_orbit_dataset,
    load_dataset,
    save_dataset,
    symmetry_group,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetHeader",
    "EvalReport",
    "NoiseSchedule",
    "ParamMode",
    "PoseSample",
    "RigidTransform",
    "Rotation",
    "SHAPES",
    "ScoreNetParams",
    "SingularityError",
    "SymmetrySpec",
    "TrainConfig",
    "build_report",
    "compose",
    "concentrated_logprob",
    "concentrated_sample",
    "equivalent_distance",
    "gen_dataset",
    "gen_orbit_dataset",
    "geodesic_walk",
    "group_exp",
    "group_log",
    "igso3_density",
    "igso3_sample",
    "init_params",
    "inverse",
    "load_dataset",
    "load_params",
    "make_schedule",
    "mode_coverage",
    "mollweide_export",
    "net_forward",
    "net_forward_batch",
    "rotation_spread",
    "sample",
    "sample_batch",
    "save_dataset",
    "save_params",
    "score_closed",
    "score_numerical",
    "score_simplified",
    "score_surrogate",
    "score_true_se3",
    "se3_jacobian_inv",
    "se3_q_matrix",
    "so3_exp",
    "so3_jacobian",
    "so3_log",
    "subsample_schedule",
    "symmetry_group",
    "tangent_dim",
    "train",
    "translation_error",
    "truncate_schedule",
    "__version__",
]
