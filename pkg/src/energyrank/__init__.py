"""EnergyRank: rank ASR/NLU intent hypotheses by their energy against the request's information-state."""

__version__ = "0.1.0"
