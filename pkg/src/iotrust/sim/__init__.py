"""Deterministic network simulation: scenarios, traffic, engine, reports."""

from .engine import (PREDICT_SECONDS, TRAIN_EPOCH_SECONDS, AssessmentView,
                     EdgeRun, MonitorWindow, RunResult, run)
from .report import describe_summary, inspect_summary, write_report
from .scenario import (AttackSpec, ProtocolParams, Scenario, ScenarioError,
                       reference_scenario)
from .traffic import (PacketTemplate, PayloadPlan, TrafficProfile,
                      generate_edge_packets)

__all__ = [
    "AssessmentView", "AttackSpec", "EdgeRun", "MonitorWindow",
    "PREDICT_SECONDS", "PacketTemplate", "PayloadPlan", "ProtocolParams",
    "RunResult", "Scenario", "ScenarioError", "TRAIN_EPOCH_SECONDS",
    "TrafficProfile", "describe_summary", "generate_edge_packets",
    "inspect_summary", "reference_scenario", "run", "write_report",
]
