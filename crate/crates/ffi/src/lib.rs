//! C interface to the simulation library.
