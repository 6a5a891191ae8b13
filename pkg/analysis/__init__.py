"""Módulos de análisis (estimadores, splitting, ajuste de exponentes, informes)."""
