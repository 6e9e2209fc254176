//! Writes a small synthetic flow capture with CIC-IDS style headers to stdout.
//!
//!     cargo run -p flowshot-cli --example synth_flows > data/sample_flows.csv
//!
//! The numbers are made up. DDoS rows lean toward port 80, long bursty flows
//! and large backward packets, with some overlap so the task is not trivial.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const HEADER: &str = " Destination Port, Flow Duration, Total Fwd Packets, Total Backward Packets, Flow Bytes/s, \
Flow IAT Std, Bwd Packet Length Std, Average Packet Size, Fwd Header Length, Fwd Header Length, Label";

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn row(rng: &mut ChaCha8Rng, ddos: bool) -> String {
    // a tenth of the attack rows look like ordinary traffic
    let disguised = ddos && rng.gen_bool(0.1);
    let attack_like = ddos && !disguised;

    let port: u32 = if ddos { 80 } else { *[443, 80, 53, 8080, 22, 443, 443, 53].get(rng.gen_range(0..8)).unwrap() };
    let port = if !ddos && rng.gen_bool(0.15) { rng.gen_range(1024..65535) } else { port };

    let duration: u64 = if attack_like {
        log_uniform(rng, 5e4, 1e8) as u64
    } else if rng.gen_bool(0.05) {
        0
    } else {
        log_uniform(rng, 3.0, 2e7) as u64
    };
    let fwd: u32 = if attack_like { rng.gen_range(2..9) } else { rng.gen_range(1..40) };
    let bwd: u32 = if attack_like { rng.gen_range(0..7) } else { rng.gen_range(0..40) };
    let bwd_std =
        if attack_like && rng.gen_bool(0.85) { rng.gen_range(1500.0..4200.0) } else { rng.gen_range(0.0..700.0) };
    let avg_size = if attack_like { rng.gen_range(250.0..1500.0) } else { rng.gen_range(10.0..420.0) };
    let iat_std = if attack_like { log_uniform(rng, 1e5, 3e7) } else { log_uniform(rng, 1.0, 4e6) };
    let bytes = avg_size * f64::from(fwd + bwd);
    let bytes_per_s = if duration == 0 {
        if rng.gen_bool(0.5) {
            "Infinity".to_string()
        } else {
            "NaN".to_string()
        }
    } else {
        format!("{:.3}", bytes / duration as f64 * 1e6)
    };
    let hdr = fwd * 20 + rng.gen_range(0..4) * 12;
    let label = if ddos { "DDoS" } else { "BENIGN" };

    format!(
        "{port}, {duration}, {fwd}, {bwd}, {bytes_per_s}, {iat_std:.3}, {bwd_std:.3}, {avg_size:.3}, {hdr}, {hdr}, {label}"
    )
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2017);
    println!("{HEADER}");
    for _ in 0..240 {
        let ddos = rng.gen_bool(0.4);
        println!("{}", row(&mut rng, ddos));
    }
}
