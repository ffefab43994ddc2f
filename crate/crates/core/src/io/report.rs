//! Report writers: training-metrics CSV and benchmark tables (CSV + JSON).

use crate::error::Result;
use crate::eval::BenchRow;
use crate::train::EpochMetrics;
use std::fmt::Write as _;
use std::path::Path;

/// `epoch, split, loss_f_nll, loss_euler, loss_x0, total`.
pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = String::from("epoch,split,loss_f_nll,loss_euler,loss_x0,total\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.epoch, m.split, m.loss_f_nll, m.loss_euler, m.loss_x0, m.total
        );
    }
    super::write_atomic(path, out.as_bytes())
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut out = String::from(
        "system,rho,gamma,imputer,mask_mode,n_seeds,failures,\
         mae_mean,mae_std,mse_mean,mse_std,rmse_mean,rmse_std,mre_mean,mre_std,r2_mean,r2_std\n",
    );
    for r in rows {
        let mode = serde_json::to_value(r.mask_mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.system, r.rho, r.gamma, r.imputer, mode, r.n_seeds, r.failures
        );
        match (&r.mean, &r.std) {
            (Some(m), Some(s)) => {
                let _ = writeln!(
                    out,
                    ",{},{},{},{},{},{},{},{},{},{}",
                    m.mae, s.mae, m.mse, s.mse, m.rmse, s.rmse, m.mre, s.mre, m.r2, s.r2
                );
            }
            _ => {
                let _ = writeln!(out, ",,,,,,,,,,");
            }
        }
    }
    super::write_atomic(path, out.as_bytes())
}

pub fn write_bench_json(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(rows)?;
    bytes.push(b'\n');
    super::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_has_fixed_schema() {
        let dir = std::env::temp_dir().join(format!("fim-rep-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        let m = EpochMetrics {
            epoch: 3,
            split: "val".into(),
            loss_f_nll: 1.5,
            loss_euler: 0.25,
            loss_x0: 0.125,
            total: 1.875,
        };
        write_metrics_csv(&path, &[m]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "epoch,split,loss_f_nll,loss_euler,loss_x0,total\n3,val,1.5,0.25,0.125,1.875\n"
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
