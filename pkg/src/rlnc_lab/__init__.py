"""Completion delay of random linear network coding over a full-duplex relay.

Modules
-------
combinatorics
    Binomials, Schröder and Narayana numbers, negative-binomial CDF.
analytic
    Closed forms, recursions and lower bounds for the expected delay.
markov
    Exact absorbing Markov chains of the buffered relay.
sim
    Vectorised Monte Carlo of three relay schemes.
sweep, validate, cli
    Experiment sweeps, cross-checks and the ``rlnc-lab`` command.
"""
from .analytic import (
    Scenario,
    delay_broadcast_system,
    delay_nobuffer_single,
    delay_nobuffer_system,
    delay_withbuffer_single_closed,
    delay_withbuffer_single_recursive,
    lower_bound_system,
    prob_relay_ahead,
)
from .markov import (
    StateSpaceTooLarge,
    build_chain_broadcast,
    build_chain_multi,
    build_chain_single,
    expected_absorption_time,
    finish_order_excess,
    prob_relay_ahead_joint,
)
from .sim import RngSpec, run_batch

__version__ = "0.1.0"

__all__ = [
    "Scenario",
    "delay_broadcast_system",
    "delay_nobuffer_single",
    "delay_nobuffer_system",
    "delay_withbuffer_single_closed",
    "delay_withbuffer_single_recursive",
    "lower_bound_system",
    "prob_relay_ahead",
    "StateSpaceTooLarge",
    "build_chain_broadcast",
    "build_chain_multi",
    "build_chain_single",
    "expected_absorption_time",
    "finish_order_excess",
    "prob_relay_ahead_joint",
    "RngSpec",
    "run_batch",
]
