"""Lindstedt-Poincare normal forms and KAM bookkeeping."""
