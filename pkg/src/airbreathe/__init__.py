"""Over-the-air federated learning under interference, protected by
spectrum breathing: random gradient pruning cascaded with spread-spectrum
transmission, with fixed and adaptive breathing-depth control.
"""

from .analysis import (ConvergenceParams, EmpiricalMse, FailureBound,
                       MseBreakdown, air_interface_error,
                       binomial_inverse_moments, closed_form_mse,
                       empirical_aircomp_mse, failure_bound, gamma_bound_check,
                       generic_pruning_mse, propagation_loss,
                       rate_supermartingale, theorem_bound_terms)
from .channel import (ChannelRealization, InterferenceProfile, PowerLedger,
                      activation_probability, audit_power, draw_channels,
                      transmit_round)
from .datasets import (DeviceShard, gaussian_mixture, load_dataset, load_idx,
                       load_idx_dataset, partition, quadratic_targets,
                       save_dataset)
from .depth_control import (DepthDecision, GsiEstimate, SirConfig,
                            adaptive_depth, beta_adaptive, beta_fixed,
                            estimate_gsi, fixed_depth)
from .errors import ConfigurationError, DegenerateStatisticsError, RoundSkip
from .fl import (ModelState, apply_update, evaluate, full_gradient,
                 ideal_aggregate, init_state, local_gradient)
from .harness import (SCHEMES, ExperimentConfig, ExperimentResult,
                      RoundTelemetry, TrialRunner, emit_plot_data,
                      read_telemetry_csv, run_experiment, write_telemetry_csv)
from .rng import stream
from .signal_chain import (SIGMA_FLOOR, NormalizationParams, PNSequenceSet,
                           PruningMask, denormalize, despread, device_chips,
                           generate_mask, generate_pn, normalize, prune,
                           receiver_output, spread, zero_pad)
from .tasks import TaskSpec, make_task, mlp_dim

__version__ = "0.1.0"
