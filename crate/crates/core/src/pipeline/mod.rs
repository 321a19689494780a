pub mod action;
pub mod belief;
pub mod database;
pub mod success;
pub mod turn;

pub use belief::BeliefState;
pub use success::{evaluate_dialog, DialogVerdict};
pub use turn::{ActiveStrategy, DialogContext, ModeFlags, TurnRunner};
