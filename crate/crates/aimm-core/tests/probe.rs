use aimm_core::align::*;
use aimm_core::channel::ChannelConfig;
use aimm_core::dataset::{generate_area_dataset, Dataset};

#[test]
fn probe_align_longer() {
    let cfg = ChannelConfig::default();
    let datasets: Vec<Dataset> = (0..20)
        .map(|a| generate_area_dataset(900, a, 100, &cfg).unwrap())
        .collect();
    for epochs in [100, 200, 400] {
        let t1 = std::time::Instant::now();
        let out = train_alignment::<f32>(&datasets, 32, epochs, 77, 1e-3).unwrap();
        println!(
            "epochs {epochs} ({:?}): final_loss {:.4} top1 {:.3} matched {:.4} mismatched {:.4}",
            t1.elapsed(), out.report.final_loss, out.report.holdout_top1,
            out.report.matched_mean, out.report.mismatched_mean
        );
    }
}
