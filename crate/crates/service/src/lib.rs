//! Reward service for RL trainers: one request scores a group of rollouts
//! against shared ground truth and returns rewards plus group advantages.

pub mod api;
pub mod config;
pub mod server;

pub use api::{parse_group_request, ApiError, ErrorBody, GroupRequest, GroupResponse, GroupScorer, Rollout};
pub use config::ServiceConfig;
pub use server::{build_scorer, router, scorer_with_judge, serve};
