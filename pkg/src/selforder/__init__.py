"""Self-supervised point-cloud ordering."""
