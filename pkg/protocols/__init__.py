"""Protocols package initialization."""
