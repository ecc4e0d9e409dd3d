"""Upper and lower bounds on quantum capacity and one-way distillable entanglement
via Riemannian optimization over isometries and unitaries."""

__version__ = "0.1.0"
