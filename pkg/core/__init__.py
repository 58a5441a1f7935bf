"""Domain types, errors, ingestion and synthetic scenarios"""
