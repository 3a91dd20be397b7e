//! Several configurations over a common seed list, summarized per
//! configuration as mean and standard deviation.

use std::io::Write;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::run_experiment;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub config: String,
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub map_mean: Option<f64>,
    pub map_std: Option<f64>,
    pub ap_r2_mean: Option<f64>,
    pub ap_r2_std: Option<f64>,
    pub quant_mean: Option<f64>,
    pub quant_std: Option<f64>,
    /// `;`-joined messages of the failed runs.
    pub errors: String,
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Runs every configuration once per seed. Failed runs are counted and
/// reported rather than aborting the table.
pub fn compare(configs: &[(String, ExperimentConfig)], seeds: &[u64]) -> Vec<CompareRow> {
    configs
        .iter()
        .map(|(label, cfg)| {
            let (mut map, mut r2, mut quant, mut errors) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for &seed in seeds {
                let mut c = cfg.clone();
                c.seed = seed;
                let mut rows = Vec::new();
                match run_experiment(&c, &mut rows) {
                    Ok(out) => {
                        map.push(out.report.retrieval.map);
                        r2.push(out.report.retrieval.ap_at_r2);
                        quant.push(out.report.train_quant_error);
                    }
                    Err(e) => errors.push(format!("seed {seed}: {e}")),
                }
            }
            let (m, s) = split(mean_std(&map));
            let (rm, rs) = split(mean_std(&r2));
            let (qm, qs) = split(mean_std(&quant));
            CompareRow {
                config: label.clone(),
                method: cfg.solver.method.name().to_string(),
                runs: seeds.len(),
                failures: errors.len(),
                map_mean: m,
                map_std: s,
                ap_r2_mean: rm,
                ap_r2_std: rs,
                quant_mean: qm,
                quant_std: qs,
                errors: errors.join("; "),
            }
        })
        .collect()
}

fn split(v: Option<(f64, f64)>) -> (Option<f64>, Option<f64>) {
    (v.map(|p| p.0), v.map(|p| p.1))
}

pub fn write_table<W: Write>(rows: &[CompareRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[]), None);
        assert_eq!(mean_std(&[0.5]), Some((0.5, 0.0)));
        let (m, s) = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!((m, s), (2.0, 1.0));
    }
}
