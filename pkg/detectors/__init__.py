"""Anomaly detectors, model artifacts and hybrid pipelines"""
