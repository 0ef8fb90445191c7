pub mod loss;
pub mod model;
pub mod parser;
pub mod planner;
pub mod powerflow;
pub mod report;
