"""Módulos núcleo del simulador (modelos, procesos de Poisson, trayectorias, eventos)."""
