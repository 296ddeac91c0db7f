"""Population protocols on complete interaction graphs, with exact
configuration-graph analysis of stable computation."""

from popproto.core import (
    Configuration,
    ConvergenceWindow,
    DisabledTransition,
    Execution,
    MaxSteps,
    OracleStable,
    Protocol,
    ProtocolError,
    RandomScheduler,
    ScriptedScheduler,
    StateId,
    Transition,
    apply,
    enabled_transitions,
    init_config,
    output,
    replay,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "ConvergenceWindow",
    "DisabledTransition",
    "Execution",
    "MaxSteps",
    "OracleStable",
    "Protocol",
    "ProtocolError",
    "RandomScheduler",
    "ScriptedScheduler",
    "StateId",
    "Transition",
    "apply",
    "enabled_transitions",
    "init_config",
    "output",
    "replay",
    "run",
]
