//! Minimal neural-network substrate: a central parameter arena, primitive
//! layers with hand-written backward passes, and the composite blocks the
//! models are assembled from.

pub mod blocks;
pub mod layers;
pub mod params;
