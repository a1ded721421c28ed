"""Language-driven batch evaluation harness for tabletop manipulation policies.

The package compiles natural-language scene descriptions into simulator
configurations, paraphrases task instructions, plans n x k trial campaigns,
executes them against built-in or external policies in a deterministic
kinematic simulator, and aggregates success rates into factor-sweep reports.
"""

from __future__ import annotations

__version__ = "0.1.0"
