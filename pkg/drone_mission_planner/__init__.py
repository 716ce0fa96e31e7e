"""
Drone Mission Planner.

A toolkit for planning multi-drone missions in obstacle-rich 3D workspaces:
goal allocation and visit sequencing under a makespan objective, followed by
minimum-snap trajectory generation with separation and clearance validation.
"""

__version__ = "0.4.0"
