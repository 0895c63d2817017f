//! Analytic parameter and FLOP accounting for the size presets.
//!
//!     cargo run --release --example model_report

use flexdit::commands::{cmd_report, report_table};
use flexdit::model::accounting::{block_main_weights, count_parameters};
use flexdit::model::ModelConfig;

fn main() {
    let rows = cmd_report(&["b", "xl", "3b"], None, 256).unwrap();
    print!("{}", report_table(&rows, 256));

    println!("\nper-preset breakdown:");
    for name in ["b", "xl", "3b"] {
        let cfg = ModelConfig::preset(name).unwrap();
        let c = count_parameters(&cfg);
        let d2 = (cfg.hidden * cfg.hidden) as f64;
        println!(
            "{name:>3}: attention {:>5.1}M  swiglu {:>5.1}M  adaln-lora {:>5.1}M  global {:>4.1}M  \
             embedders {:>4.1}M  final {:>4.1}M  | block main weights = {:.2} d^2",
            c.attention as f64 / 1e6,
            c.swiglu as f64 / 1e6,
            c.adaln_lora as f64 / 1e6,
            c.global_adaln as f64 / 1e6,
            c.embedders as f64 / 1e6,
            c.final_layer as f64 / 1e6,
            block_main_weights(&cfg) as f64 / d2,
        );
    }
}
