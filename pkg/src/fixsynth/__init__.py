"""fixsynth: synthetic fixed-income market data and simulation-based
tracking-error portfolio construction.

Pipeline: a ground-truth synthetic market corpus (or an ingested panel)
feeds rolling-window snapshots; a Wasserstein GAN samples correlation
matrices; an encoder-decoder translates each matrix into volatility,
expected-return and forward-return vectors; simulation sets built from
either dataset drive a tracking-error QP whose results are compared in a
paired backtest grid.
"""

__version__ = "0.1.0"
