"""DAG-ledger asynchronous federated learning: protocol library and
deterministic discrete-event simulator."""

from .analysis import (AnomalyReport, TipModelInput, anomaly_report,
                       attack_success_rate, expected_tips, measure_tips)
from .config import ConfigError, ExperimentConfig, load_config, validate
from .datasets import DataShard, Trigger, load_idx, partition_noniid, synthesize
from .ledger import Dag, LedgerError, Transaction, make_transaction
from .metrics import MetricsLog, MetricsRow
from .model import (ModelParams, ModelShape, TrainConfig, evaluate,
                    federated_average, init_params, train)
from .protocol import AgentConfig, NodeProfile, agent_poll, node_iteration
from .simulator import run

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "AnomalyReport", "ConfigError", "Dag", "DataShard",
    "ExperimentConfig", "LedgerError", "MetricsLog", "MetricsRow",
    "ModelParams", "ModelShape", "NodeProfile", "TipModelInput",
    "Transaction", "Trigger", "agent_poll", "anomaly_report",
    "attack_success_rate", "evaluate", "expected_tips", "federated_average",
    "init_params", "load_config", "load_idx", "make_transaction",
    "measure_tips", "node_iteration", "partition_noniid", "run",
    "synthesize", "train", "validate", "__version__",
]
