pub mod blockfile;
pub mod dataset;
pub mod diagnostics;
pub mod losses;
pub mod mining;
pub mod model;
pub mod numerics;
pub mod training;
