use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::runner::METRICS_HEADER;

/// One aggregated cell: a final `eval` or `compare` metric across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run_id: String,
    pub env: String,
    pub shift_kind: String,
    pub shift_level: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

type Key = (String, String, String, String, String);

/// Reads metrics CSVs and aggregates the `eval` and `compare` metrics over
/// seeds, keeping the latest step per seed. Rows come out sorted by key.
pub fn aggregate(paths: &[impl AsRef<Path>]) -> Result<Vec<ReportRow>> {
    let mut cells: BTreeMap<Key, BTreeMap<u64, (usize, f64)>> = BTreeMap::new();
    for path in paths {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        if rdr.headers()?.iter().ne(METRICS_HEADER) {
            return Err(Error::format(
                path.display().to_string(),
                "not a metrics CSV",
            ));
        }
        for rec in rdr.records() {
            let rec = rec?;
            let stage = &rec[5];
            if stage != "eval" && stage != "compare" {
                continue;
            }
            let bad = |what: &str| Error::format(path.display().to_string(), format!("bad {what}"));
            let seed: u64 = rec[4].parse().map_err(|_| bad("seed"))?;
            let step: usize = rec[6].parse().map_err(|_| bad("step"))?;
            let value: f64 = rec[8].parse().map_err(|_| bad("value"))?;
            let key = (
                rec[0].to_string(),
                rec[1].to_string(),
                rec[2].to_string(),
                rec[3].to_string(),
                rec[7].to_string(),
            );
            let slot = cells
                .entry(key)
                .or_default()
                .entry(seed)
                .or_insert((step, value));
            if step >= slot.0 {
                *slot = (step, value);
            }
        }
    }
    Ok(cells
        .into_iter()
        .map(
            |((run_id, env, shift_kind, shift_level, metric), per_seed)| {
                let vals: Vec<f64> = per_seed.values().map(|&(_, v)| v).collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                ReportRow {
                    run_id,
                    env,
                    shift_kind,
                    shift_level,
                    metric,
                    mean,
                    std,
                    n_seeds: vals.len(),
                }
            },
        )
        .collect())
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run_id",
        "env",
        "shift_kind",
        "shift_level",
        "metric",
        "mean",
        "std",
        "n_seeds",
    ])?;
    for r in rows {
        w.write_record([
            r.run_id.as_str(),
            &r.env,
            &r.shift_kind,
            &r.shift_level,
            &r.metric,
            &r.mean.to_string(),
            &r.std.to_string(),
            &r.n_seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_latest_step_per_seed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        std::fs::write(
            &p,
            "run_id,env,shift_kind,shift_level,seed,stage,step,metric_name,value\n\
             r,pm,gravity,5,0,eval,10,normalized_score,10\n\
             r,pm,gravity,5,0,eval,20,normalized_score,40\n\
             r,pm,gravity,5,1,eval,20,normalized_score,60\n\
             r,pm,gravity,5,1,policy,20,critic_loss,3\n",
        )
        .unwrap();
        let rows = aggregate(&[&p]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean, 50.0);
        assert_eq!(rows[0].std, 10.0);
        assert_eq!(rows[0].n_seeds, 2);
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .contains("normalized_score,50,10,2"));
    }

    #[test]
    fn rejects_foreign_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(aggregate(&[&p]).is_err());
    }
}
