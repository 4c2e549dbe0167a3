// SPSA desk-scale training probe.
use std::path::Path;
use std::time::Instant;
use spikemap::experiment::{build_features, generate_responses, ResponseSettings};
use spikemap::mnist::{load_dataset, select_split};
use spikemap::optics::OpticsSpec;
use spikemap::readout::{evaluate, train_spsa, Batch, SpsaConfig};
use spikemap::spikes::FeatureMode;
use spikemap::NetworkParams;

fn main() {
    let dir = Path::new("data/digits");
    let train = load_dataset(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte")).unwrap();
    let test = load_dataset(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte")).unwrap();
    let (tr_idx, te_idx) = select_split(train.images.count, test.images.count, 1000, 200, 7, false).unwrap();
    let tr_labels: Vec<u8> = tr_idx.iter().map(|&i| train.labels[i]).collect();
    let te_labels: Vec<u8> = te_idx.iter().map(|&i| test.labels[i]).collect();

    let settings = ResponseSettings {
        params: NetworkParams::tuned(),
        optics: OpticsSpec::ideal((64, 64)),
        projection_seed: 11,
        gamma: 8.0,
        on_steps: 23,
        off_steps: 25,
    };
    let tr_records = generate_responses(&settings, &train.images, &tr_idx).unwrap();
    let te_records = generate_responses(&settings, &test.images, &te_idx).unwrap();

    for (delta_l, lr, epochs) in [(3u32, 1e-4f64, 10_000usize), (3, 1e-3, 10_000), (1, 1e-3, 10_000)] {
        let fs = build_features(&tr_records, &tr_labels, delta_l, FeatureMode::Amplitude, 10).unwrap();
        let fs_te = build_features(&te_records, &te_labels, delta_l, FeatureMode::Amplitude, 10).unwrap();
        let cfg = SpsaConfig { epochs, learning_rate: lr, record_every: 2000, ..SpsaConfig::default() };
        let t0 = Instant::now();
        let out = train_spsa(&fs.batch(), &tr_labels, Some((&fs_te.batch(), &te_labels)), cfg, 99).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let acc_te = evaluate(&out.weights, &fs_te.features, fs_te.m, &te_labels).unwrap().accuracy;
        let acc_tr = evaluate(&out.weights, &fs.features, fs.m, &tr_labels).unwrap().accuracy;
        println!("dl={delta_l} lr={lr} epochs={epochs}: train {acc_tr:.3} test {acc_te:.3} ({dt:.0}s)");
        for row in out.history.iter().step_by(2) {
            println!("   epoch {:>6} loss {:.4} tr {:.3} te {:?}", row.epoch, row.train_loss, row.train_accuracy, row.test_accuracy);
        }
    }
}
