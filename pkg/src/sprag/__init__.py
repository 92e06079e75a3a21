"""Retrieval-augmented story-point estimation.

Subpackages cover the full pipeline: issue-corpus ingestion and
chronological splitting (`corpus`), embedding-based similarity retrieval
(`retriever`), prompt construction and numeric-output parsing
(`generator`), per-project runs and parameter sweeps (`estimator`),
error metrics and cross-method comparisons (`evaluation`, `stats`,
`report`), a command-line front end (`cli`), and a planning-assistant
web service (`service`).
"""

__version__ = "0.1.0"
