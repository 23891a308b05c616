"""Deterministic and stochastic optimizers."""

from .deterministic import (
    ALM_SCHEDULE, LineSearchConfig, PenaltySchedule, PenaltyState, VectorFunction, augmented_lagrangian, bfgs,
    bfgs_update, cg_solve, gd_backtracking, lagrangian_first_order, line_search_bound, newton_cg, quadratic_penalty,
)
from .stochastic import (
    DEFAULTS, METHODS, NS_COEFFS, MuonConfig, StochState, init_state, muon_step, newton_schulz, ns_scalar_map,
    oscillation_band, robbins_monro, sg_run, state_from_json, stochastic_step,
)
