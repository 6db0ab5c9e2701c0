use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::NormStats;
use crate::datamodel::MixedBatch;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor3};

pub const DATASET_FORMAT: &str = "mixgan-dataset/1";
const CONT_CSV: &str = "cont.csv";
const DISC_CSV: &str = "disc.csv";
const LABELS_CSV: &str = "labels.csv";
const MANIFEST_JSON: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub cont_shape: [usize; 3],
    pub disc_shape: [usize; 3],
    /// `[N, L]` when labels are present.
    pub labels_shape: Option<[usize; 2]>,
    pub feature_names_cont: Vec<String>,
    pub feature_names_disc: Vec<String>,
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
    #[serde(default)]
    pub flagged: Vec<String>,
}

fn write_tensor(path: &Path, x: &Tensor3, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["patient".to_string(), "t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(x.d + 2);
    for i in 0..x.n {
        for t in 0..x.t {
            rec.clear();
            rec.push(i.to_string());
            rec.push(t.to_string());
            rec.extend((0..x.d).map(|c| x.get(i, t, c).to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(path: &Path, row: usize, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::malformed(path, format!("row {row}: not a number: {s:?}")))
}

fn read_tensor(path: &Path, shape: [usize; 3]) -> Result<Tensor3> {
    let [n, t, d] = shape;
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.len() != d + 2 {
        return Err(Error::malformed(path, format!("expected {} columns", d + 2)));
    }
    let mut data = Vec::with_capacity(n * t * d);
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let (want_i, want_t) = (r / t.max(1), r % t.max(1));
        let i: usize = rec[0].parse().map_err(|_| Error::malformed(path, format!("row {r}: bad patient index")))?;
        let h: usize = rec[1].parse().map_err(|_| Error::malformed(path, format!("row {r}: bad time index")))?;
        if (i, h) != (want_i, want_t) {
            return Err(Error::malformed(path, format!("row {r}: expected index ({want_i}, {want_t})")));
        }
        for c in 0..d {
            data.push(parse_f64(path, r, &rec[c + 2])?);
        }
        rows += 1;
    }
    if rows != n * t {
        return Err(Error::malformed(path, format!("expected {} rows, found {rows}", n * t)));
    }
    Tensor3::from_vec(n, t, d, data)
}

/// Writes `cont.csv`, `disc.csv`, optional `labels.csv`, and `manifest.json`.
/// Values use shortest round-trip formatting, so output is byte-stable.
pub fn write_dataset(
    dir: &Path,
    batch: &MixedBatch,
    norm_stats: Option<&NormStats>,
    flagged: &[String],
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    write_tensor(&dir.join(CONT_CSV), &batch.cont, &batch.feature_names_cont)?;
    write_tensor(&dir.join(DISC_CSV), &batch.disc, &batch.feature_names_disc)?;
    let labels_path = dir.join(LABELS_CSV);
    if let Some(l) = &batch.labels {
        let mut w = csv::Writer::from_path(&labels_path)?;
        let mut header = vec!["patient".to_string()];
        header.extend((0..l.cols).map(|c| format!("class_{c}")));
        w.write_record(&header)?;
        for r in 0..l.rows {
            let mut rec = vec![r.to_string()];
            rec.extend(l.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
    } else if labels_path.exists() {
        fs::remove_file(&labels_path)?;
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        cont_shape: batch.cont.shape(),
        disc_shape: batch.disc.shape(),
        labels_shape: batch.labels.as_ref().map(|l| [l.rows, l.cols]),
        feature_names_cont: batch.feature_names_cont.clone(),
        feature_names_disc: batch.feature_names_disc.clone(),
        norm_stats: norm_stats.cloned(),
        flagged: flagged.to_vec(),
    };
    fs::write(dir.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(MixedBatch, DatasetManifest)> {
    let manifest_path = dir.join(MANIFEST_JSON);
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::malformed(&manifest_path, e.to_string()))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::malformed(&manifest_path, format!("unsupported format {:?}", manifest.format)));
    }
    let cont = read_tensor(&dir.join(CONT_CSV), manifest.cont_shape)?;
    let disc = read_tensor(&dir.join(DISC_CSV), manifest.disc_shape)?;
    let labels = match manifest.labels_shape {
        Some([n, l]) => {
            let path = dir.join(LABELS_CSV);
            let mut rdr = csv::Reader::from_path(&path)?;
            let mut data = Vec::with_capacity(n * l);
            for (r, rec) in rdr.records().enumerate() {
                let rec = rec?;
                if rec.len() != l + 1 {
                    return Err(Error::malformed(&path, format!("row {r}: expected {} columns", l + 1)));
                }
                for c in 0..l {
                    data.push(parse_f64(&path, r, &rec[c + 1])?);
                }
            }
            Some(Matrix::from_vec(n, l, data).map_err(|_| Error::malformed(&path, "label count mismatch"))?)
        }
        None => None,
    };
    let batch = MixedBatch::new(
        cont,
        disc,
        labels,
        manifest.feature_names_cont.clone(),
        manifest.feature_names_disc.clone(),
    )?;
    Ok((batch, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{make_fixture, FixtureSpec};

    #[test]
    fn roundtrip_is_exact() {
        let fx = make_fixture(&FixtureSpec {
            n_patients: 6,
            t: 5,
            j: 3,
            k: 2,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &fx.batch, None, &[]).unwrap();
        let (back, m) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, fx.batch);
        assert_eq!(m.cont_shape, [6, 5, 3]);
    }
}
