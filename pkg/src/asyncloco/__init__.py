"""Simulator and optimizers for asynchronous Local-SGD with heterogeneous workers."""
