"""Synthetic data, TV-norm splits, perturbation and the robustness/speed experiments."""
