"""Workflow lookup by config id."""

from __future__ import annotations

from erlkit.workflow.cemrl import CemRlWorkflow
from erlkit.workflow.erl import ErlWorkflow
from erlkit.workflow.es import EsWorkflow
from erlkit.workflow.pbt import PbtWorkflow, SyntheticWorkflow
from erlkit.workflow.ppo import PpoWorkflow
from erlkit.workflow.td3 import Td3Workflow

WORKFLOW_CLASSES = {
    "es": EsWorkflow,
    "ppo": PpoWorkflow,
    "td3": Td3Workflow,
    "erl": ErlWorkflow,
    "cemrl": CemRlWorkflow,
    "pbt": PbtWorkflow,
    "pbt-cso": PbtWorkflow,
    "synthetic": SyntheticWorkflow,
}


def build(cfg):
    """Instantiate the workflow named by ``cfg.workflow``."""
    try:
        cls = WORKFLOW_CLASSES[cfg.workflow]
    except KeyError:
        raise ValueError(f"unknown workflow {cfg.workflow!r}") from None
    return cls.build_from_config(cfg)
