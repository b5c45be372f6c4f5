"""
Option pricing under exponential Levy models with a large trader's
feedback, and the Riccati HJB portfolio solver for pension savings.
"""
__version__ = '0.1.0'
