"""Passive census of exposed ROS masters and Rosbridge servers."""

__version__ = "0.1.0"
