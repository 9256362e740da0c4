//! Optimal consumption and investment under Epstein-Zin preferences with a
//! hard consumption floor, solved through the convex dual of the value
//! function.

pub mod closedform;
pub mod dualsolver;
pub mod io;
mod interp;
mod ode;
pub mod params;
pub mod policy;
pub mod simulate;
pub mod verify;
