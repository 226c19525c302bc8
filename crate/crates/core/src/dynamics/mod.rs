//! Model definitions: a small expression language with exact symbolic
//! derivatives, compiled intrinsic and coupled models, and built-ins.

mod builtin;
mod expr;
mod model;
mod network;
mod parse;
mod program;
pub mod schema;

pub use builtin::{builtin_model, hopf, leader_follower, vanderpol, Builtin, BUILTIN_NAMES};
pub use expr::{EvalError, Expr, ExprDisplay, ExprError, Func, Symbols};
pub use model::{coupling_symbols, model_symbols, Model, ModelSpec};
pub use network::{Graph, Network, NetworkSpec};
pub use parse::parse_expr;
pub use program::Program;
