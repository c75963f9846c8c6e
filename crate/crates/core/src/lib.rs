pub mod cluster;
pub mod error;
pub mod forecast;
pub mod noise;
pub mod pgdbv;
pub mod series;
pub mod synth;
