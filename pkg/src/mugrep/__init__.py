"""Multi-source real estate appraisal: evolving transaction-event graphs,
hierarchical community graphs, and district-partitioned multi-task valuation."""

__version__ = "0.1.0"
