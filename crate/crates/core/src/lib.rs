pub mod collocation;
pub mod nlp;
pub mod planner;
pub mod relocation;
pub mod robot;
pub mod stability;
pub mod terrain;
pub mod traction;
pub mod trajopt;
