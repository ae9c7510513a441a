"""Graph-representation model poisoning: graph, autoencoder, spectral synthesis, constrained finalization."""
from .graph import ParamGraph, block_ranges, build_graph
from .gsp import GspDecomposition, gsp_reconstruct
from .optimize import AttackState, dual_update, finalize_malicious, learning_phase_update, project_ball, select_inputs
from .pipeline import AttackConfig, GrmpAttacker
from .vgae import VgaeConfig, VgaeModel, decode, encode, gcn_layer, train_vgae, vgae_loss

__all__ = [
    "AttackConfig", "AttackState", "GrmpAttacker", "GspDecomposition", "ParamGraph", "VgaeConfig",
    "VgaeModel", "block_ranges", "build_graph", "decode", "dual_update", "encode", "finalize_malicious",
    "gcn_layer", "gsp_reconstruct", "learning_phase_update", "project_ball", "select_inputs",
    "train_vgae", "vgae_loss",
]
