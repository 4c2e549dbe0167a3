// Desk-scale pipeline probe: spike statistics and ridge accuracy vs gamma.
use std::path::Path;
use spikemap::experiment::{build_features, generate_responses, ResponseSettings};
use spikemap::mnist::{load_dataset, select_split};
use spikemap::optics::OpticsSpec;
use spikemap::readout::{evaluate, train_ridge};
use spikemap::spikes::FeatureMode;
use spikemap::NetworkParams;

fn main() {
    let dir = Path::new("data/digits");
    let train = load_dataset(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte")).unwrap();
    let test = load_dataset(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte")).unwrap();
    let (tr_idx, te_idx) = select_split(train.images.count, test.images.count, 1000, 200, 7, false).unwrap();
    let tr_labels: Vec<u8> = tr_idx.iter().map(|&i| train.labels[i]).collect();
    let te_labels: Vec<u8> = te_idx.iter().map(|&i| test.labels[i]).collect();

    let n = 4096usize;
    for gamma in [4.0, 8.0, 12.0, 20.0] {
        let settings = ResponseSettings {
            params: NetworkParams::tuned(),
            optics: OpticsSpec::ideal((64, 64)),
            projection_seed: 11,
            gamma,
            on_steps: 23,
            off_steps: 25,
        };
        let t0 = std::time::Instant::now();
        let tr_records = generate_responses(&settings, &train.images, &tr_idx).unwrap();
        let te_records = generate_responses(&settings, &test.images, &te_idx).unwrap();
        let gen_time = t0.elapsed().as_secs_f64();

        // spike stats
        let spiked: usize = tr_records.iter().map(|r| r.first_spike_time.iter().flatten().count()).sum();
        let frac = spiked as f64 / (tr_records.len() * n) as f64;
        let lat_hist = spikemap::spikes::latency_histogram(&tr_records, u32::MAX);
        let lat_spread = lat_hist.keys().cloned().collect::<Vec<_>>();
        println!("gamma={gamma}: spike fraction {frac:.4}, latencies {:?} (gen {gen_time:.1}s)", lat_spread);

        for delta_l in [1u32, 3, 7, u32::MAX] {
            let fs = build_features(&tr_records, &tr_labels, delta_l, FeatureMode::Amplitude, 10).unwrap();
            let fs_te = build_features(&te_records, &te_labels, delta_l, FeatureMode::Amplitude, 10).unwrap();
            let w = match train_ridge(&fs.batch(), 1e-6) {
                Ok(w) => w,
                Err(e) => { println!("  dl={delta_l}: ridge failed: {e}"); continue; }
            };
            let acc_tr = evaluate(&w, &fs.features, fs.m, &tr_labels).unwrap().accuracy;
            let acc_te = evaluate(&w, &fs_te.features, fs_te.m, &te_labels).unwrap().accuracy;
            println!("  dl={delta_l:>10}: active {:.4} sparsity {:.4} ridge train {acc_tr:.3} test {acc_te:.3}",
                fs.active_fraction, fs.sparsity());
        }
    }
}
