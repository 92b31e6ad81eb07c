pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod nn;
pub mod report;
pub mod sampler;
pub mod sketch;
pub mod sparse;
pub mod tensor;
pub mod textpipe;
pub mod trainer;
