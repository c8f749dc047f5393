"""advsel: long-time behaviour of advection-selection equations dn/dt + (f n)' = (r - rho) n."""

__version__ = "0.1.0"
