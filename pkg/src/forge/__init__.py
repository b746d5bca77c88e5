"""Two-stage multi-agent design space exploration for kernel optimization.

The pipeline estimates latency and area for pragma-annotated kernel designs,
searches per-function variant spaces, selects globally optimal variant
combinations under an area budget, and refines the best candidates with a
population of seeded exploration agents.
"""

from __future__ import annotations

__version__ = "0.1.0"
