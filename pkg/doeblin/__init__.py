"""
doeblin-chains: strong Doeblin (restart) Markov chains with exact oracles
"""

__version__ = "0.1.0"
