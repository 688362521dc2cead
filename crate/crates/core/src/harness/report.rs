use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::run::RunRecord;
use crate::error::{Error, Result};

pub const BER_VS_SNR: &str = "ber_vs_snr.csv";
pub const BER_VS_TIME: &str = "ber_vs_time.csv";
pub const LATENCY: &str = "latency.csv";
pub const SER_ROTATION: &str = "ser_rotation.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerVsSnrRow {
    pub updater: String,
    pub snr_db: f64,
    pub ber_mean: f64,
    pub ber_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerVsTimeRow {
    pub updater: String,
    pub snr_db: f64,
    pub block: usize,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerRotationRow {
    pub updater: String,
    pub snr_db: f64,
    pub block: usize,
    pub ser: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub updater: String,
    pub repr: String,
    #[serde(rename = "P")]
    pub p: usize,
    pub mean_us: f64,
    pub p95_us: f64,
}

const BER_VS_SNR_HEADER: [&str; 4] = ["updater", "snr_db", "ber_mean", "ber_std"];
const BER_VS_TIME_HEADER: [&str; 4] = ["updater", "snr_db", "block", "ber"];
const SER_HEADER: [&str; 4] = ["updater", "snr_db", "block", "ser"];
const LATENCY_HEADER: [&str; 5] = ["updater", "repr", "P", "mean_us", "p95_us"];

/// Everything written to the output directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub ber_vs_snr: Vec<BerVsSnrRow>,
    pub ber_vs_time: Vec<BerVsTimeRow>,
    pub ser_rotation: Vec<SerRotationRow>,
    pub latency: Vec<LatencyRow>,
}

/// Groups keyed by first appearance, so the input order carries through.
fn group_by<K: PartialEq + Clone, T>(items: impl Iterator<Item = (K, T)>) -> Vec<(K, Vec<T>)> {
    let mut out: Vec<(K, Vec<T>)> = Vec::new();
    for (k, v) in items {
        match out.iter_mut().find(|(key, _)| *key == k) {
            Some((_, vs)) => vs.push(v),
            None => out.push((k, vec![v])),
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Trial averages of the per-block records. `with_ser` fills the rotation SER
/// family (per-block SER); otherwise it stays empty.
pub fn summarize(records: &[RunRecord], with_ser: bool) -> Report {
    let mut report = Report::default();
    let key = |r: &RunRecord| (r.updater.clone(), r.snr_db.to_bits());
    for ((updater, snr_bits), recs) in group_by(records.iter().map(|r| (key(r), r))) {
        let snr_db = f64::from_bits(snr_bits);
        let per_trial: Vec<f64> = group_by(recs.iter().map(|r| (r.trial, *r)))
            .into_iter()
            .map(|(_, rs)| {
                let errors: usize = rs.iter().map(|r| r.bit_errors).sum();
                let bits: usize = rs.iter().map(|r| r.data_bits).sum();
                if bits == 0 {
                    0.0
                } else {
                    errors as f64 / bits as f64
                }
            })
            .collect();
        report.ber_vs_snr.push(BerVsSnrRow {
            updater: updater.clone(),
            snr_db,
            ber_mean: mean(&per_trial),
            ber_std: std_dev(&per_trial),
        });
        let mut blocks = group_by(recs.iter().map(|r| (r.block, *r)));
        blocks.sort_by_key(|(b, _)| *b);
        for (block, rs) in blocks {
            let bers: Vec<f64> = rs.iter().map(|r| r.ber).collect();
            report.ber_vs_time.push(BerVsTimeRow {
                updater: updater.clone(),
                snr_db,
                block,
                ber: mean(&bers),
            });
            if with_ser {
                let sers: Vec<f64> = rs.iter().map(|r| r.ser).collect();
                report.ser_rotation.push(SerRotationRow {
                    updater: updater.clone(),
                    snr_db,
                    block,
                    ser: mean(&sers),
                });
            }
        }
    }
    report
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Writes the four CSV families into `dir` (created if missing). Empty
/// families produce header-only files.
pub fn emit_csv(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let paths: Vec<PathBuf> = [BER_VS_SNR, BER_VS_TIME, LATENCY, SER_ROTATION]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_rows(&paths[0], &BER_VS_SNR_HEADER, &report.ber_vs_snr)?;
    write_rows(&paths[1], &BER_VS_TIME_HEADER, &report.ber_vs_time)?;
    write_rows(&paths[2], &LATENCY_HEADER, &report.latency)?;
    write_rows(&paths[3], &SER_HEADER, &report.ser_rotation)?;
    Ok(paths)
}

/// Parses a directory written by [`emit_csv`].
pub fn read_report(dir: &Path) -> Result<Report> {
    Ok(Report {
        ber_vs_snr: read_rows(&dir.join(BER_VS_SNR))?,
        ber_vs_time: read_rows(&dir.join(BER_VS_TIME))?,
        ser_rotation: read_rows(&dir.join(SER_ROTATION))?,
        latency: read_rows(&dir.join(LATENCY))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(updater: &str, trial: usize, block: usize, errors: usize) -> RunRecord {
        RunRecord {
            updater: updater.into(),
            trial,
            snr_db: 8.0,
            block,
            ber: errors as f64 / 10.0,
            ser: errors as f64 / 20.0,
            bit_errors: errors,
            data_bits: 10,
            symbol_errors: errors / 2,
            symbols: 5,
            pilots_seen: 4 * (block + 1),
            update_us_mean: 1.5,
            update_us_p95: 2.5,
        }
    }

    #[test]
    fn empty_records_give_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        emit_csv(&Report::default(), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(BER_VS_SNR)).unwrap();
        assert_eq!(text, "updater,snr_db,ber_mean,ber_std\n");
        let text = std::fs::read_to_string(dir.path().join(LATENCY)).unwrap();
        assert_eq!(text, "updater,repr,P,mean_us,p95_us\n");
        assert_eq!(read_report(dir.path()).unwrap(), Report::default());
    }

    #[test]
    fn trial_mean_is_arithmetic_mean() {
        let recs = vec![
            rec("a", 0, 0, 1),
            rec("a", 0, 1, 3),
            rec("a", 1, 0, 0),
            rec("a", 1, 1, 0),
            rec("a", 2, 0, 5),
            rec("a", 2, 1, 1),
        ];
        let r = summarize(&recs, true);
        // per-trial BER: 4/20, 0/20, 6/20
        let trial = [0.2, 0.0, 0.3];
        let m = trial.iter().sum::<f64>() / 3.0;
        assert!((r.ber_vs_snr[0].ber_mean - m).abs() < 1e-15);
        let var = trial.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 2.0;
        assert!((r.ber_vs_snr[0].ber_std - var.sqrt()).abs() < 1e-15);
        assert_eq!(r.ber_vs_time.len(), 2);
        assert!((r.ber_vs_time[0].ber - 0.2).abs() < 1e-15);
        assert!((r.ser_rotation[1].ser - (3.0 + 0.0 + 1.0) / 60.0).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let recs: Vec<RunRecord> = (0..3)
            .flat_map(|t| (0..4).map(move |b| rec("x", t, b, t + b)))
            .chain((0..2).map(|t| rec("mmse", t, 0, 1)))
            .collect();
        let mut report = summarize(&recs, true);
        report.latency.push(LatencyRow {
            updater: "cm-ekf".into(),
            repr: "full".into(),
            p: 458,
            mean_us: 123.456789,
            p95_us: 0.1 + 0.2,
        });
        let dir = tempfile::tempdir().unwrap();
        emit_csv(&report, dir.path()).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), report);
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("blocker");
        std::fs::write(&file, "x").unwrap();
        let err = emit_csv(&Report::default(), &file.join("sub")).unwrap_err();
        assert!(err.to_string().contains("blocker"), "{err}");
    }
}
