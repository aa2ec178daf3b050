"""featmim: desk-scale masked image modeling with deep-feature targets.

Students reconstruct frozen teacher features at masked patch positions;
teachers are ranked by the token-diversity of their outputs.
"""

__version__ = "0.1.0"
