"""CNN training with microcanonical-annealing refinement of the weight vector."""

from .annealer import (AnnealConfig, AnnealResult, AnnealTrace, DemonState, Objective,
                       anneal_run, benchmark_objective, cnn_objective, demon_step, perturb,
                       sa_run)
from .cnn import (DEFAULT_ARCH, Architecture, Network, accuracy, backprop_grads, flatten_params,
                  init_network, loss, network_forward, sgd_epoch, unflatten_params)
from .config import ExperimentConfig, load_config
from .harness import (RunReport, compare_ma_sa, emit_report, run_experiment, sweep_delta_scale,
                      sweep_neighborhood)

__version__ = "0.1.0"
