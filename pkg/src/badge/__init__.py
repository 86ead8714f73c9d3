"""Variational learning of time- and frequency-varying sparse Gaussian graphical models."""
from .anneal import AnnealDriver, annealing_rate, bootstrap_resample, metropolis_accept
from .anneal import perturb_hyperparameters
from .chains import binary_chain_entropy, binary_chain_infer, gauss_chain_entropy
from .chains import gauss_chain_infer, BinaryChainPotentials, GaussChainParams
from .data import GroundTruth, ObservationSet, load_observations, save_observations
from .data import simulate_time_varying, simulate_var1, standardize
from .engine import FitConfig, FitResult, PredictorCache, compute_elbo, edge_gradients, fit
from .engine import rebuild_cache, update_diag_chain, update_edge_chain
from .engine import update_hyperparameters, update_missing_values
from .metrics import GraphTrajectory, MetricsReport, extract_graphs, structure_metrics
from .model import VariationalModel, edge_k_moments, hyper_expectations, initial_model
from .model import lognormal_moments
from .spectral import FrequencyBand, SpectralCoefficients, band_graph, fit_spectral
from .spectral import normalized_dft, var1_inverse_spectrum

__version__ = "0.1.0"
