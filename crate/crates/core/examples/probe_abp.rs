use nonlocal_core::experiments::{potential, ExperimentConfig};
fn main() {
    let cfg = ExperimentConfig {
        n_cells: 256,
        instance_count: 50,
        sigmas: vec![0.5, 1.0, 1.5, 1.9],
        seed: 7,
        ..Default::default()
    };
    let r = potential::run(&cfg).unwrap();
    for f in &r.fits { println!("fit {}: exp {:.4} r2 {:.4} n {}", f.name, f.exponent, f.r_squared, f.samples); }
    for v in &r.verdicts { println!("{} -> {} ({})", v.rule, v.pass, v.detail); }
}
