"""Domain core, policy language and simulator of the scheduler control plane."""
