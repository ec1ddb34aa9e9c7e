"""Federated learning with uncertainty-weighted fairness aggregation."""
