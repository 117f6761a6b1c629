"""
GaGSL: graph structure learning guided by the graph information bottleneck,
with a robustness harness for random poisoning attacks.
"""
__version__ = "1.0.0"
