"""Training pipelines sharing one ``init``/``step``/``evaluate``/``learn`` contract."""

from erlkit.workflow.base import Budget, EvalReport, Workflow, WorkflowState, learn

__all__ = ["Budget", "EvalReport", "Workflow", "WorkflowState", "learn"]
