"""storetrace: offline performance analysis of in-memory data store traces.

The package ingests newline-delimited JSON trace streams collected on each
host of a deployment, merges them onto one clock, replays them through an
event-handling automaton into a disk-backed interval history, and runs
detectors for cluster-bus amplification, connection double frees, and read
stalls. A small HTTP API serves the resulting model to interactive viewers.
"""

__version__ = "0.1.0"
