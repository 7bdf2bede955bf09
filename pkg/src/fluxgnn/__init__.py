"""Conservative flux-split graph learning for spatiotemporal dynamics.

Subpackages by concern:

    meshes     grids, multi-level coarsening, ghost halos, graph container
    calculus   discrete gradient/divergence/adjoint oracle on graphs
    solvers    RK4 reference integrators and initial-condition generators
    datasets   trajectory container, splits, normalization, training noise
    model      the learnable simulator and checkpoint container
    gradcheck  finite-difference gradient verification
    training   rollout loss, optimizer, schedules, train/evaluate loops
    metrics    RMSE / correlation / persistence forecast
    verify     the end-to-end invariant battery behind `fluxgnn verify`
    datagen    dataset production presets
    cli        command-line interface
"""

from .meshes import (EdgeGeometry, MeshGraph, add_periodic_ghosts, build_grid_graph,
                     build_multimesh, compute_edge_geometry, read_graph, write_graph)
from .calculus import (adjointness_residual, divergence, global_skew_sum,
                       sym_skew_decompose, weighted_gradient)
from .solvers import (BurgersParams, GrayScottParams, Trajectory, burgers_ic,
                      burgers_rhs, gs_ic, gs_rhs, rk4_step, simulate)
from .datasets import (Dataset, DatasetManifest, NoiseSpec, add_training_noise,
                       compute_normalization, read_dataset, temporal_downsample,
                       write_dataset)
from .model import (GraphSimulator, ModelConfig, build_model, graph_tensors,
                    load_checkpoint, save_checkpoint)
from .gradcheck import GradientReport, gradient_check
from .metrics import pcc, rmse
from .training import (GraphPrep, TrainConfig, apply_bc_padding, evaluate_rollout,
                       persistence_baseline, rollout_loss, train)

__version__ = "0.1.0"
