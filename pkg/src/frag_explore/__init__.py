"""Levy-process and growth-fragmentation encodings of CLE explorations on
LQG disks: exponent algebra, samplers, trees and the carpet measure."""

__version__ = "0.1.0"
