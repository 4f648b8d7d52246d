"""Grey-box Bayesian optimization of composite objectives f(x, y(x)) = g(x) + h(x, y)."""

__version__ = "0.1.0"
