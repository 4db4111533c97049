"""Mortality-rate forecasting with tree ensembles, neural networks and Lee-Carter.

Modules
-------
data       grids, rates, supervised samples, scaling, synthetic generator
ensemble   regression trees, random forest and three boosting variants
neural     dense, LSTM and attention networks with hand-written gradients
leecarter  Poisson Lee-Carter fit and random-walk forecast
forecast   one predict-a-year interface over every model family
eval       rolling-origin cross-validation and error metrics
lifetable  life expectancy, annuities, provisions, exposure projection
cli        the ``mortlearn`` command
"""

__version__ = "0.1.0"
