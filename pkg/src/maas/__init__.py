"""Manufacturing-as-a-service marketplace mechanisms: auctions, stable matching and order acceptance."""

__version__ = "0.1.0"
