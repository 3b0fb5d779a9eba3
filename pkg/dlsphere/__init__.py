from .core import (BudgetError, ConfigError, Constellation, Dataset, DimensionError, MlpParams,
    Observation, PipelineResult, RadiusModel, RadiusVector, SingularChannelError,
    UnsupportedConstellationError, brute_force_mld, count_points_in_sphere, dl_sphere_decode,
    expected_complexity_dl, expected_complexity_fixed_radius, expected_complexity_spi,
    gen_training_set, mmse_detect, q_closest_distances, sdirs_decode, sphere_decode, train)
from .records import ComplexityRow, DecodeReport, ExperimentConfig, RatioRow, ResultRow
from .harness import cmd_ber, cmd_complexity, cmd_decode, cmd_gen_data, cmd_train
