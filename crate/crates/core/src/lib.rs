//! Skill estimation for dart throwers and an exact solver for the 501 game.

pub mod aimprob;
pub mod board;
pub mod cache;
pub mod dataio;
pub mod dm;
pub mod emfit;
pub mod session;
pub mod store;
pub mod zsg;
