"""Simulation and inference for repeated multilevel-ancilla readout of bosonic codes.

Modules
-------
params
    System parameters, code definitions, deterministic random streams.
hmm
    Photon-number hidden Markov model and maximum-likelihood decoding.
theory
    Closed-form and exact majority-vote infidelity for Fock codes.
protocol
    Monte Carlo of the readout/reset protocol and QND-ness experiment.
readout
    Dispersive-readout trajectories and misassignment statistics.
dynamics
    Lindblad simulation of ancilla pi pulses and shelving.
cli
    The ``mlreadout`` command line.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .ancilla import AncillaConfusion
from .hmm import (
    CorruptInputError, HiddenMarkovModel, LogicalOutcome, brute_force_posterior, build_emission,
    build_transition, classify_mle, forward_backward, majority_vote,
)
from .params import CodeSpec, ConfigError, RandomStream, SystemParams, builtin_codes, get_code, load_params
from .protocol import ErrorModel, herald_preparation, qnd_experiment, run_experiment, simulate_trial
from .records import ReadoutSequence, read_sequences, write_sequences
from .theory import InfidelityBreakdown, fock_infidelity, theory_curves

__all__ = [
    "BACKEND", "AncillaConfusion", "CodeSpec", "ConfigError", "CorruptInputError", "ErrorModel",
    "HiddenMarkovModel", "InfidelityBreakdown", "LogicalOutcome", "RandomStream", "ReadoutSequence",
    "SystemParams", "brute_force_posterior", "build_emission", "build_transition", "builtin_codes",
    "classify_mle", "fock_infidelity", "forward_backward", "get_code", "herald_preparation",
    "load_params", "majority_vote", "qnd_experiment", "read_sequences", "run_experiment",
    "simulate_trial", "theory_curves", "write_sequences",
]
