"""Batch query service with per-user scratch databases.

Quick synchronous queries run inline under a short time quantum; longer
queries queue as jobs, run asynchronously under a generous quantum, and
land their results in the submitting user's scratch database for later
refinement, export, or sharing.
"""

from __future__ import annotations

__version__ = "0.1.0"
