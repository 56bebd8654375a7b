"""Clients, configuration, dataset files and experiment runs."""
from .clients import (CachedClient, ModelClient, NeverCorrectClient, OracleClient, RandomClient,
                      RemoteChatClient, ScriptedClient, build_client)
from .config import CONFIG_SCHEMA, ExperimentConfig
from .dataset import generate_dataset, load_dataset, read_jsonl, save_dataset, write_jsonl
from .experiment import (ClientSolver, ModelProposer, load_results, rescore, run_experiment, run_probes,
                         run_thresholds)

__all__ = [
    "CachedClient", "ModelClient", "NeverCorrectClient", "OracleClient", "RandomClient", "RemoteChatClient",
    "ScriptedClient", "build_client", "CONFIG_SCHEMA", "ExperimentConfig", "generate_dataset", "load_dataset",
    "read_jsonl", "save_dataset", "write_jsonl", "ClientSolver", "ModelProposer", "load_results", "rescore",
    "run_experiment", "run_probes", "run_thresholds",
]
