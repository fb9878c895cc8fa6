//! Infection spread among random walks.
//!
//! `sim` runs the event-driven SI/SIS dynamics and measures the front
//! speed, `cells` estimates the space-time cell events behind the
//! positive-speed argument, and `chernoff` checks the Poisson tail bounds
//! those estimates lean on.

pub mod cells;
pub mod chernoff;
pub mod sim;

pub use cells::{
    collision_census, estimate_cell_event, estimate_nu, spread_probability, CellEventReport,
    CellEventSpec, CellRep, CollisionCensus, Placement, SpreadPoint, SpreadReport,
};
pub use chernoff::{chernoff_poisson, ChernoffBounds};
pub use sim::{
    clip_front_series, front_speed, run_epidemic, run_epidemic_traced, run_si, run_sis,
    EpidemicParticle, EpidemicTrace, FrontSeries, FrontSpeed,
};
