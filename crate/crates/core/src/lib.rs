//! Knowledge-graph collaborative filtering.
//!
//! Users, items, words, brands and categories become typed entities in one
//! graph; each relation is a translation vector, and a user's recommendations
//! are the items nearest to `e_user + e_buy`.

pub mod eval;
pub mod ingest;
pub mod io;
pub mod kg;
pub mod model;
pub mod recommend;
pub mod synthetic;
