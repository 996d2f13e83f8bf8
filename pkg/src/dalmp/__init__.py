"""Day-ahead LMP forecasting: a small reverse-mode autodiff engine, an
LSTM + CNN forecaster, linear and stateless baselines, a synthetic market and
a profit-risk calculator for a gas unit."""

__version__ = "0.1.0"
