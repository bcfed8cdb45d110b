"""Far-field speaker verification: front-end enhancement, ResNet-BAM embeddings, adversarial training."""
