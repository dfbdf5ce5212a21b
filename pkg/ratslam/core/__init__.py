"""SLAM core: pose-cell attractor, local view cells and the experience map."""
