"""One-bit MIMO radar: simulation, atomic-norm recovery, frequency extraction and bounds."""
from .scene import (RadarConfig, Target, TargetScene, build_ground_truth, generate_waveforms,
                    reference_scene, random_scene, simulate_received, snr_to_sigma)
from .sampling import (MaskSet, ThresholdSet, apply_F, apply_F_adjoint, apply_F_all,
                       dac_quantize, draw_masks, gen_threshold_rgt, gen_threshold_rut,
                       minimal_perturbation, one_bit_quantize)
from .anm_solver import SolverParams, SolverError, solve_1b_anm_l1, solve_unquantized_anm
from .spectral import (estimate_amplitudes, estimate_model_order, extract_targets,
                       pair_frequencies, vandermonde_decompose)
from .crb import (fim_onebit, fim_onebit_unknown_sigma, fim_unquantized,
                  fim_unquantized_unknown_sigma, expected_fim_rgt, expected_fim_rut,
                  crb_from_fim, weight_omega, approx_omega, phi)
from ._accel import HAVE_NUMBA

__version__ = "0.1.0"
