"""Command-line interface: one subcommand per pipeline phase"""
