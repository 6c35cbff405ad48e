"""Proof-of-Trust blockchain engine plus discrete-round DSA simulator."""

__version__ = "0.1.0"

from . import cli, config, consensus, contracts, crypto, ledger, simnet, trust

__all__ = ["cli", "config", "consensus", "contracts", "crypto", "ledger",
           "simnet", "trust", "__version__"]
