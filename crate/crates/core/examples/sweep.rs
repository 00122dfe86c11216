//! Runs the default eight-table scenario over a range of seeds and prints
//! per-seed metrics with the misclassified objects.
//!
//! `cargo run --release --example sweep -- 0 10`

use scenediff::eval::{run_scenario, RunOptions, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (start, count) = (args.first().copied().unwrap_or(0), args.get(1).copied().unwrap_or(10));
    let scenario = match std::env::var("SCENARIO") {
        Ok(path) => Scenario::from_json(&std::fs::read_to_string(path)?)?,
        Err(_) => Scenario::table_one(),
    };
    let (mut p, mut r, mut np, mut nr) = (0.0, 0.0, 0.0, 0.0);
    for seed in start..start + count {
        let out = run_scenario(&scenario, seed, &RunOptions::default())?;
        let rep = &out.report;
        let nn = rep.nn.expect("baseline enabled");
        println!(
            "seed {seed}: objs {} meas {}/{} trees {}/{} reg {} terr {:.4} rerr {:.3} | ours {}/{}/{} | nn {}/{}/{} | {:.3} ms/meas",
            rep.counts.source_objects,
            rep.counts.source_measurements,
            rep.counts.target_measurements,
            rep.counts.source_tree_objects,
            rep.counts.target_tree_objects,
            rep.registration.status,
            rep.registration.translation_error.unwrap_or(f64::NAN),
            rep.registration.rotation_error_deg.unwrap_or(f64::NAN),
            rep.ours.tp,
            rep.ours.fp,
            rep.ours.fn_,
            nn.tp,
            nn.fp,
            nn.fn_,
            rep.timing.mean_ms_per_measurement,
        );
        if std::env::var_os("NN_FRACTIONS").is_some() {
            for o in &rep.objects {
                let table = out.generated.source_scene.object(o.gt_id).or(out.generated.target_scene.object(o.gt_id)).map(|x| x.table);
                println!("   nn gt {} {:?} table {:?} fraction {:.3}", o.gt_id, o.label, table, o.nn_fraction.unwrap_or(f64::NAN));
            }
        }
        for o in &rep.objects {
            if o.ours_changed != o.label.is_changed() {
                let obj = out.generated.source_scene.object(o.gt_id).or(out.generated.target_scene.object(o.gt_id));
                println!("   ours miss gt {} {:?} table {:?} verdicts {:?}", o.gt_id, o.label, obj.map(|x| x.table), o.ours_verdicts);
            }
        }
        p += rep.ours.precision;
        r += rep.ours.recall;
        np += nn.precision;
        nr += nn.recall;
    }
    let n = count as f64;
    println!("mean ours p {:.3} r {:.3} | nn p {:.3} r {:.3}", p / n, r / n, np / n, nr / n);
    Ok(())
}
