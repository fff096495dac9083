"""Input-output network risk toolkit.

Propagation matrices from make/use tables, variance decomposition under
correlated shocks, the latent-circle propagation economy, the Monte Carlo
check of the idiosyncratic-shock assumption, firm calibration and factor
portfolio tests.
"""

__version__ = "0.1.0"
