//! Placeholder; replaced by the guide doctest shim.
