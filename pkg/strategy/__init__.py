"""Estrategias de movimiento del objetivo (quedarse quieto frente a trayectorias móviles)."""
