"""Probabilistic ontology query answering over annotated-disjunction facts."""

from ._nlq import PipelineError, generate_dataset, marginals, run

__all__ = ["run", "marginals", "generate_dataset", "PipelineError"]
