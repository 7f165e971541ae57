# HD routing simulator
# Hierarchical bypass routing driven by per-node Q-learning agents
