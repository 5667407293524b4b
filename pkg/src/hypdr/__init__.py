"""hypdr: property-directed reachability for hybrid automata."""

__version__ = "0.1.0"
