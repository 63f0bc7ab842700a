"""Finite multi-agent Markov games: exact evaluation, independent policy
gradient with convergence certification, and potential-structure
verification tools."""

from .analysis import (BestResponse, NashReport, PotentialCertificate,
                       best_response, congestion_symmetric_nash_search,
                       cycle_residual, deterministic_nash_search,
                       dummy_term_flatness_evidence, mismatch_estimate,
                       nash_gap, normal_form_potential, ordinal_sign_check,
                       potential_identity_residual, potential_value,
                       sample_cycle_residuals, statewise_potentials, verify_mpg)
from .errors import (EnumerationCapError, GameValidationError,
                     MisconfigurationError, MpgLabError)
from .game import (DEFAULT_ENUMERATION_CAP, EvaluationReport, JointPolicy,
                   TabularMarkovGame, decode_joint_action, encode_joint_action,
                   induced_chain, iter_joint_actions, joint_action_probs,
                   marginalize_over_others, occupancy, validate_game,
                   validate_policy, value_exact, value_of_state_rewards)
from .geometry import (GradientMapping, alpha_greedy, directional_improvement,
                       gradient_mapping, l1_accuracy, linf_distance,
                       project_policy, project_simplex)
from .gradients import (GradientEstimate, TrajectorySample,
                        episodic_gradient_estimates,
                        estimator_second_moment_bound, exact_gradient,
                        exact_gradient_all, reinforce_estimate,
                        sample_trajectory, trajectory_stream)
from .instances import (CongestionSpec, ImplicitCongestionGame,
                        build_blackhole, build_chain_mpg, build_congestion,
                        build_random_mpg, build_xor_zerosum,
                        congestion_state_potentials)
from .io import (game_from_dict, game_to_dict, load_game, load_policy,
                 save_game, save_policy)
from .learning import (LearningTrace, PgaConfig, PsgaConfig, pga_step,
                       run_pga, run_psga, theoretical_schedule)
from .potentials import (BilinearStatePotential, PotentialHandle,
                         StateRewardPotential, StaticStatePotential,
                         handle_from_dict)

__version__ = "0.1.0"
