# Optimization, checkpoints, evaluation and gradient verification
