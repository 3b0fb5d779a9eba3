from .record import ConfigError, Record, read_json, write_json
from .lattice import (Constellation, DimensionError, Observation, SingularChannelError,
    UnsupportedConstellationError, draw_trial, gen_channel, input_size, mmse_filter, observe,
    real_embedding, real_stack, sigma_to_snr, snr_to_sigma, stack_input)
from .complexity import (FlopModel, PsiTable, complexity_exponent, expected_complexity_dl,
    expected_complexity_fixed_radius, expected_complexity_spi, f_dn, f_sb, f_sp,
    inv_reg_lower_gamma, psi, reg_lower_gamma, set_psi_cache, using_psi_cache)
from .search import (BudgetError, DecodeOutcome, LatticeSearch, RadiusVector, SdirsOutcome,
    babai_estimate, babai_radius, brute_force_mld, count_points_in_sphere, q_closest_distances,
    qr_preprocess, sdirs_decode, sdirs_radii, sphere_decode)
from .network import (AdamState, Dataset, MlpParams, NormStats, RadiusModel, TrainConfig,
    adam_step, clipped_relu, dataset_loss, forward, gen_training_set, gradient, initial_params,
    mse_minibatch_loss, split_dataset, train, train_with_history)
from .pipeline import (BatchReport, BatchStats, DecodePath, PathKind, PipelineResult,
    decode_batch, decode_with_radii, dl_sphere_decode, mmse_detect, postprocess_radii)
from .caching import TableCache
