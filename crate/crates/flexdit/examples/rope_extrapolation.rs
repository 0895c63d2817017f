//! Rotary extrapolation methods side by side on an out-of-budget grid.
//!
//!     cargo run --release --example rope_extrapolation

use flexdit::rope::{attention_scale, RopeConfig, RopeMethod, RopeTable};

fn main() {
    let head_dim = 16;
    let train_axis = 16; // budget 256 tokens
    let grid = (24, 48); // 1:2 grid at 4.5x the budget

    println!("test grid {}x{} tokens, trained axis {train_axis}\n", grid.0, grid.1);
    for method in [
        RopeMethod::None,
        RopeMethod::Pi,
        RopeMethod::Ntk,
        RopeMethod::Yarn,
        RopeMethod::VisionNtk,
        RopeMethod::VisionYarn,
    ] {
        let cfg = RopeConfig { method, ..RopeConfig::new(head_dim, train_axis) };
        let table = RopeTable::build(&cfg, grid.0, grid.1).unwrap();
        println!(
            "{:<12} s={:.2} s_h={:.2} s_w={:.2}  pos_scale=({:.3},{:.3})  magnitude={:.4}",
            method.name(),
            table.factors.s,
            table.factors.s_h,
            table.factors.s_w,
            table.pos_scale_h,
            table.pos_scale_w,
            table.magnitude
        );
        let fmt = |f: &[f64]| {
            f.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(" ")
        };
        println!("   theta_h: {}", fmt(&table.freqs_h));
        println!("   theta_w: {}", fmt(&table.freqs_w));
    }

    let s = attention_scale(grid.0, grid.1, train_axis, train_axis);
    println!("\nattention scale at this grid: {s:.4}");
}
