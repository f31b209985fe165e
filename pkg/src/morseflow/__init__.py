"""morseflow: numerics for gradient-like flows.

Computes hyperbolic stationary-point data, local invariant manifolds by
the graph transform, transversality measures between tangent spaces,
stable foliations with radial functions, boundary flows on unstable
manifolds, juxtaposed flows, and characteristic cell maps; ships the
radially-weighted counterexample experiment and a small CLI.
"""

__version__ = "0.1.0"
