"""Recursive dual value functions for problems with forward-looking constraints."""
from .model import (ModelSpec, EmptyFeasibleSet, validate, lipschitz_bound, feasible_actions,
                    policy_payoff, viable_mask, reachable_nodes)
from .io import load_model, save_model, load_field, save_field, ModelParseError
from .dual_value import (DualValueField, value_iterate, init_affine_majorant, evaluate,
                         subgradient, bellman_apply, make_gamma_grid, check_invariants)

__version__ = "0.1.0"
