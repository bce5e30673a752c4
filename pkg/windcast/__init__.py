"""
windcast - Two-stage wind power forecasting with a ridge-regression ensemble.
"""

__version__ = "0.1.0"
