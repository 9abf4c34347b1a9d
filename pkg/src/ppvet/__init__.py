"""Vetting toolkit for VR app privacy policies.

Five checks: availability, completeness, granularity of collection/use/share
claims, data minimization against counterpart apps, and consistency with
code-level evidence.
"""

__version__ = "0.1.0"
