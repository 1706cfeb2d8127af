"""Cardinality estimation for conjunctive queries over hyper-relational knowledge graphs."""

__version__ = "0.1.0"
