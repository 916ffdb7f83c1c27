"""Causal, fixed-step simulator for droop-controlled DC microgrids."""
from .components import (EssParams, LoadParams, PcmParams, PgmParams, PmmParams,
                         ParameterError)
from .scenario import Scenario, dump_scenario, load_scenario, parse_scenario
from .solver import (NumericalDivergence, SolverConfig, TimeSeries, build_model, run,
                     simulate, step)
from .summary import RunSummary, summarize, summarize_scenario
from .syntax import NetlistError, ParseError, SemanticError
from .topology import Topology, parse_netlist, serialize, validate

__version__ = "0.1.0"

__all__ = [
    "EssParams", "LoadParams", "PcmParams", "PgmParams", "PmmParams", "ParameterError",
    "Scenario", "dump_scenario", "load_scenario", "parse_scenario",
    "NumericalDivergence", "SolverConfig", "TimeSeries", "build_model", "run", "simulate", "step",
    "RunSummary", "summarize", "summarize_scenario",
    "NetlistError", "ParseError", "SemanticError",
    "Topology", "parse_netlist", "serialize", "validate",
]
