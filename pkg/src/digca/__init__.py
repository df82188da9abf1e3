"""Self-organizing agent hierarchies for dynamic DCOPs, with a discrete-event simulator."""
from .model import ConstraintEdge, Domain, Environment, EnvironmentEvent, EventKind, generate_script
from .policies import PolicyConfig, phi, select_respondent
from .protocol import ActivityState, AgentRegisters, ExecutionOrder, Message, MessageKind
from .sim import NetworkModel, SimConfig, Simulation

__all__ = [
    "ActivityState",
    "AgentRegisters",
    "ConstraintEdge",
    "Domain",
    "Environment",
    "EnvironmentEvent",
    "EventKind",
    "ExecutionOrder",
    "Message",
    "MessageKind",
    "NetworkModel",
    "PolicyConfig",
    "SimConfig",
    "Simulation",
    "generate_script",
    "phi",
    "select_respondent",
]
