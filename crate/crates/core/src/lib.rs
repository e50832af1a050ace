pub mod augment;
pub mod costmap;
pub mod featnet;
pub mod ground;
pub mod img;
pub mod patch;
pub mod planner;
pub mod tensor;
pub mod synth;
