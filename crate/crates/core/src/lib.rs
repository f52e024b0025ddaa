pub mod autodiff;
pub mod geometry;
pub mod models;
pub mod losses;
pub mod data;
pub mod io;
pub mod config;
pub mod checkpoint;
pub mod train;
pub mod evaluation;
