//! Print the built-in default configuration as JSON, suitable as a starting
//! point for experiment configs:
//!
//! ```text
//! cargo run -p wzlab --example default_config > my_config.json
//! ```

fn main() {
    let cfg = wzlab::config::ExperimentConfig::default();
    println!("{}", serde_json::to_string_pretty(&cfg).unwrap());
}
