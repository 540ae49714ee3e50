pub mod cli;
pub mod correlate;
pub mod fibermode;
pub mod models;
pub mod numeric;
pub mod simulate;
pub mod stokes;
pub mod stream;
pub mod taper;
pub mod trace;
