//! Temporary tuning probe for the area-recovery repetitions. Not part
//! of the suite.

use pipeline::analysis::{area_estimate, pixel_area};
use pipeline::ensemble::{
    aggregate_confidence, predict_ensemble, threshold_map, train_ensemble, ConfidenceMap,
    MemberPrediction,
};
use pipeline::evaluate::calibrate_threshold;
use pipeline::model::ModelConfig;
use pipeline::sampling::compute_band_stats;
use pipeline::synth::{generate, SyntheticSceneSpec};
use pipeline::train::TrainSchedule;
use raster::{rasterize_polygons, spatial_block_split, Split};

fn member_maps(preds: &[MemberPrediction], members: usize) -> Vec<ConfidenceMap> {
    (0..members)
        .map(|m| {
            let subset: Vec<MemberPrediction> = preds
                .iter()
                .filter(|p| p.member == m)
                .map(|p| MemberPrediction {
                    member: p.member,
                    timestamp: p.timestamp,
                    map: p.map.clone(),
                })
                .collect();
            aggregate_confidence(&subset, 1).unwrap()
        })
        .collect()
}

struct Probe {
    tag: &'static str,
    noise: f64,
    side: usize,
    width: usize,
    epochs: usize,
    iters: usize,
    batch: usize,
    lr: f64,
    reps: u64,
}

fn probe(p: &Probe) {
    let mut covered = 0;
    for r in 0..p.reps {
        let spec = SyntheticSceneSpec {
            width: p.side,
            height: p.side,
            scene_count: 3,
            cloud_fraction: 0.05,
            noise_sigma: p.noise,
            seed: 300 + r,
            ..SyntheticSceneSpec::default()
        };
        let scene = generate(&spec).unwrap();
        let side = p.side;
        let labels =
            rasterize_polygons(&scene.labels, side, side, *scene.truth_mask.geo()).unwrap();
        let split = spatial_block_split(&labels, 16, 0.25, 7).unwrap();
        let stats = compute_band_stats(&scene.stack.scenes, &split, 50).unwrap();
        let cfg = ModelConfig {
            hidden_width: p.width,
            ..ModelConfig::default()
        };
        let schedule = TrainSchedule {
            epochs: p.epochs,
            iterations_per_epoch: p.iters,
            batch_size: p.batch,
            learning_rate: p.lr,
        };
        let seeds: Vec<u64> = (0..10).map(|k| 1000 * r + 1 + k).collect();
        let (ens, _) = train_ensemble(
            &cfg,
            &seeds,
            &scene.stack.scenes,
            &labels,
            Some(&scene.height_true),
            &stats,
            &split,
            &schedule,
            1.0,
        )
        .unwrap();
        let preds = predict_ensemble(
            &ens,
            &scene.stack.scenes,
            Some(&scene.height_true),
            &stats,
            side,
        )
        .unwrap();
        let conf = aggregate_confidence(&preds, 1).unwrap();
        let val_mask: Vec<bool> = split.cells().iter().map(|&s| s == Split::Val).collect();
        let (t, _) = calibrate_threshold(&conf, &labels, &val_mask, 0.01).unwrap();
        let maps = member_maps(&preds, 10);
        let est = area_estimate(&maps, t, 0.95).unwrap();
        let truth_px = scene
            .truth_mask
            .band_u8(0)
            .iter()
            .filter(|&&v| v == 1)
            .count();
        let truth = truth_px as f64 * pixel_area(scene.truth_mask.geo());
        let (lo, hi) = (est.ci_low_ha.unwrap(), est.ci_high_ha.unwrap());
        let cover = hi > lo && lo <= truth && truth <= hi;
        if cover {
            covered += 1;
        }

        let binary = threshold_map(&conf, t).unwrap();
        let tmask = scene.truth_mask.band_u8(0);
        let pred_b = binary.band_u8(0);
        let (mut fp, mut fn_) = (0usize, 0usize);
        for px in 0..side * side {
            match (tmask[px] == 1, pred_b[px] == 1) {
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        println!(
            "{} rep {r}: t {t:.2} truth {truth:.2} mean {:.2} err {:+.2}% std {:.3} \
             ci [{:.2},{:.2}] cover {cover} | agg fp {fp} fn {fn_}",
            p.tag,
            est.mean_ha,
            (est.mean_ha - truth) / truth * 100.0,
            est.std_ha,
            lo,
            hi
        );
    }
    println!("{}: covered {covered}/{}", p.tag, p.reps);
}

#[test]
fn tune_c04() {
    probe(&Probe {
        tag: "E w4 n.02",
        noise: 0.02,
        side: 64,
        width: 4,
        epochs: 3,
        iters: 60,
        batch: 4,
        lr: 5e-3,
        reps: 3,
    });
    probe(&Probe {
        tag: "F w8 n.02",
        noise: 0.02,
        side: 64,
        width: 8,
        epochs: 3,
        iters: 60,
        batch: 4,
        lr: 5e-3,
        reps: 3,
    });
    probe(&Probe {
        tag: "G w8 n.02 96px",
        noise: 0.02,
        side: 96,
        width: 8,
        epochs: 3,
        iters: 60,
        batch: 4,
        lr: 5e-3,
        reps: 3,
    });
}
