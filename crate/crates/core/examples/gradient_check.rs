//! Finite-difference check of the mini network's total loss.
//!
//! `cargo run --release --example gradient_check -- [probes]`

use madgnet::gradcheck::worst;
use madgnet::selfcheck::network_gradients;

fn main() -> madgnet::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(200, |v| v.parse().expect("probes"));
    let probes = network_gradients(n, 11)?;
    let mut sorted: Vec<_> = probes.iter().collect();
    sorted.sort_by(|a, b| b.rel_error().total_cmp(&a.rel_error()));
    for p in sorted.iter().take(10) {
        println!("{:40} [{:5}]  rel {:.2e}", p.name, p.index, p.rel_error());
    }
    let w = worst(&probes).expect("at least one probe");
    println!("{} probes, worst relative error {:.2e}", probes.len(), w.rel_error());
    Ok(())
}
