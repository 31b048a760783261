use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use super::run::RunReport;
use crate::error::Result;
use crate::geometry::write_truth_csv;
use crate::measure::write_measurements_csv;
use crate::metrics::{write_metric_csv, MetricAccumulator, MetricRow};
use crate::ptrm::QFunctionProfile;
use crate::tracker::StepReport;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `epoch,track_id,weight,tau_s,doppler,P11,P12,P22,confirmed,existing,amplitude`.
pub fn write_tracks_csv<W: std::io::Write>(out: W, steps: &[StepReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "epoch", "track_id", "weight", "tau_s", "doppler", "P11", "P12", "P22", "confirmed", "existing", "amplitude",
    ])?;
    for s in steps {
        for t in &s.tracks {
            w.write_record([
                s.epoch.to_string(),
                t.id.to_string(),
                t.weight.to_string(),
                t.state.delay.to_string(),
                t.state.doppler.to_string(),
                t.cov[(0, 0)].to_string(),
                t.cov[(0, 1)].to_string(),
                t.cov[(1, 1)].to_string(),
                t.confirmed.to_string(),
                t.existing.to_string(),
                t.amplitude.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn metric_rows(rows: &mut Vec<MetricRow>, source: &str, acc: &MetricAccumulator) {
    let ospa = acc.mean_ospa();
    for (k, m) in acc.mse().into_iter().enumerate() {
        let trials = acc.trials(k);
        let epoch = k + 1;
        for (metric, value) in [
            ("ospa", ospa[k]),
            ("mse_delay", m.mse_delay),
            ("mse_doppler", m.mse_doppler),
            ("matched", m.matched as f64),
            ("missed", m.missed as f64),
        ] {
            rows.push(MetricRow {
                epoch,
                metric: metric.into(),
                source: source.into(),
                value,
                trials,
            });
        }
    }
}

/// Mean of `v` over 1-based epochs `from..=to`, skipping NaN.
pub fn epoch_mean(v: &[f64], from: usize, to: usize) -> f64 {
    let picked: Vec<f64> = v
        .iter()
        .enumerate()
        .filter(|(k, x)| (from..=to).contains(&(k + 1)) && !x.is_nan())
        .map(|(_, &x)| x)
        .collect();
    if picked.is_empty() {
        f64::NAN
    } else {
        picked.iter().sum::<f64>() / picked.len() as f64
    }
}

pub fn summary_text(report: &RunReport) -> String {
    let plan = &report.plan;
    let mut s = String::new();
    let _ = writeln!(s, "trials: {} ({} failed)", plan.trials, report.failures.len());
    let _ = writeln!(s, "epochs: {}", plan.epochs);
    let _ = writeln!(s, "seed: {}", plan.seed);
    let _ = writeln!(s, "measurement source: {:?}", plan.measurement_source);
    let _ = writeln!(s, "resolvable paths: {}", report.truth_states.first().map_or(0, Vec::len));
    let tracked = report.tracked.mean_ospa();
    let measured = report.measured.mean_ospa();
    let _ = writeln!(s, "mean OSPA, tracked: {:.6}", epoch_mean(&tracked, 1, plan.epochs));
    let _ = writeln!(s, "mean OSPA, measured: {:.6}", epoch_mean(&measured, 1, plan.epochs));
    if !report.ber.methods.is_empty() {
        let _ = writeln!(s, "BER ranking (best first):");
        for slot in report.ber.ranking() {
            let _ = writeln!(
                s,
                "  {:<18} {:.6}  ({} frames, {} lost)",
                report.ber.methods[slot].name(),
                report.ber.overall(slot),
                report.ber.total_frames(slot),
                report.ber.lost_frames(slot)
            );
        }
    }
    for f in &report.failures {
        let _ = writeln!(s, "trial {} failed: {}", f.trial, f.message);
    }
    s
}

/// Write the full run directory. Contents depend only on the plan, so a
/// rerun with the same seed reproduces every byte.
pub fn write_run(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("plan.toml"), report.plan.to_toml_string())?;
    write_truth_csv(create(&dir.join("truth.csv"))?, &report.truth)?;

    for t in &report.trials {
        let td = dir.join(format!("trial_{:04}", t.trial));
        fs::create_dir_all(&td)?;
        write_measurements_csv(create(&td.join("measurements.csv"))?, &t.measurements)?;
        write_tracks_csv(create(&td.join("tracks.csv"))?, &t.steps)?;
        if !t.frames.is_empty() {
            let mut w = csv::Writer::from_writer(create(&td.join("ber.csv"))?);
            w.write_record(["frame", "epoch", "method", "ber", "mse_db", "status"])?;
            for f in &t.frames {
                w.write_record([
                    f.epoch.to_string(),
                    f.epoch.to_string(),
                    f.method.name().to_string(),
                    f.ber.to_string(),
                    f.mse_db.to_string(),
                    f.status.as_str().to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    for f in &report.failures {
        let td = dir.join(format!("trial_{:04}", f.trial));
        fs::create_dir_all(&td)?;
        fs::write(td.join("error.txt"), format!("{}\n", f.message))?;
    }

    let mut rows = Vec::new();
    metric_rows(&mut rows, "tracked", &report.tracked);
    metric_rows(&mut rows, "measured", &report.measured);
    write_metric_csv(create(&dir.join("metrics.csv"))?, &rows)?;

    if !report.ber.methods.is_empty() {
        let table = &report.ber;
        let mut w = csv::Writer::from_writer(create(&dir.join("ber.csv"))?);
        w.write_record(["epoch", "method", "ber", "frames"])?;
        for epoch in 1..=table.epochs() {
            for (slot, m) in table.methods.iter().enumerate() {
                w.write_record([
                    epoch.to_string(),
                    m.name().to_string(),
                    table.mean(slot, epoch).to_string(),
                    table.frames(slot, epoch).to_string(),
                ])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(create(&dir.join("ber_summary.csv"))?);
        w.write_record(["method", "mean_ber", "frames", "lost_frames"])?;
        for (slot, m) in table.methods.iter().enumerate() {
            w.write_record([
                m.name().to_string(),
                table.overall(slot).to_string(),
                table.total_frames(slot).to_string(),
                table.lost_frames(slot).to_string(),
            ])?;
        }
        w.flush()?;
    }
    fs::write(dir.join("summary.txt"), summary_text(report))?;
    Ok(())
}

/// One `qprofile_<mode>.csv` per profile plus `qprofile_summary.csv`.
pub fn write_qprofiles(profiles: &[(&str, QFunctionProfile)], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("qprofile_summary.csv"))?);
    w.write_record(["mode", "peak_lag_s", "mainlobe_peak", "max_sidelobe", "focusing_ratio"])?;
    for (name, p) in profiles {
        p.write_csv(create(&dir.join(format!("qprofile_{name}.csv")))?)?;
        w.write_record([
            name.to_string(),
            p.peak_lag().to_string(),
            p.mainlobe_peak.to_string(),
            p.max_sidelobe.to_string(),
            p.focusing_ratio().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
