//! Scenario configuration, map persistence and trace ingestion.

pub mod config;
pub mod ingest;
pub mod persist;

pub use config::{
    config_hash, load_scenario, parse_scenario, save_scenario, to_toml, DeconvMode, ScenarioConfig,
};
pub use ingest::{ingest_map, ingest_trace, MapSchema, TraceSchema};
pub use persist::{inspect_bgs, read_bgs, write_bgs, BgsHeader};
