"""Ranging-inertial odometry toolkit.

Provides UWB least-squares positioning, a nominal-frame construction from
anchor layouts, a recurrent inertial network and a heterogeneous
graph-attention fusion network, together with a deterministic UWB/IMU
simulator and an evaluation harness.
"""

__version__ = "0.1.0"
