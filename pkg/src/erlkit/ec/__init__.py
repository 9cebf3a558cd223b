"""Ask/tell evolutionary optimizers over flat parameter vectors."""

from erlkit.ec.ars import ArsState, ars_ask, ars_init, ars_split_rewards, ars_tell
from erlkit.ec.cem import CemState, cem_ask, cem_init, cem_tell, noise_floor
from erlkit.ec.cmaes import CapacityError, CmaState, cmaes_ask, cmaes_init, cmaes_tell
from erlkit.ec.genetic import gaussian_mutate, tournament_select, uniform_crossover
from erlkit.ec.openes import NoiseTable, OpenEsState, centered_ranks, openes_ask, openes_init, openes_tell
from erlkit.ec.ves import VesState, log_weights, ves_ask, ves_init, ves_tell

__all__ = [
    "ArsState",
    "CapacityError",
    "CemState",
    "CmaState",
    "NoiseTable",
    "OpenEsState",
    "VesState",
    "ars_ask",
    "ars_init",
    "ars_split_rewards",
    "ars_tell",
    "cem_ask",
    "cem_init",
    "cem_tell",
    "centered_ranks",
    "cmaes_ask",
    "cmaes_init",
    "cmaes_tell",
    "gaussian_mutate",
    "log_weights",
    "noise_floor",
    "openes_ask",
    "openes_init",
    "openes_tell",
    "tournament_select",
    "uniform_crossover",
    "ves_ask",
    "ves_init",
    "ves_tell",
]
