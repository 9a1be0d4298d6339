"""blockmate: a cooperative voxel-building assistant trained with belief-MCTS."""

__version__ = "0.1.0"
