"""Desk-scale lab for grounded referential games, emergent corpora, and transfer evaluation."""

__version__ = "0.1.0"
