//! Dataset files on disk: one headerless numeric CSV per modality
//! (rows = samples), a single-column labels CSV, and a JSON manifest
//! naming them. Reals are written with 17 significant digits so a
//! write-then-load round trip is bit-exact.

use super::MultimodalDataset;
use crate::error::{MladError, Result};
use crate::numerics::Mat;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalityEntry {
    pub name: String,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub modalities: Vec<ModalityEntry>,
    pub labels_path: String,
    pub num_classes: usize,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_csv_matrix(path: &Path) -> Result<Mat> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| {
                MladError::validation(format!(
                    "non-numeric cell '{cell}' at {}:{}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MladError::validation(format!("empty CSV {}", path.display())));
    }
    Mat::from_rows(&rows)
}

fn parse_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let v: usize = line.trim().parse().map_err(|_| {
            MladError::validation(format!(
                "non-integer label '{line}' at {}:{}",
                path.display(),
                lineno + 1
            ))
        })?;
        labels.push(v);
    }
    Ok(labels)
}

/// Loads and validates the dataset a manifest describes.
pub fn load_dataset(manifest_path: &Path) -> Result<MultimodalDataset> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| MladError::validation(format!("bad manifest: {e}")))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut names = Vec::new();
    let mut features = Vec::new();
    for entry in &manifest.modalities {
        names.push(entry.name.clone());
        features.push(parse_csv_matrix(&resolve(base, &entry.path))?);
    }
    let labels = parse_labels(&resolve(base, &manifest.labels_path))?;
    MultimodalDataset::new(names, features, labels, manifest.num_classes)
}

fn write_csv_matrix(path: &Path, m: &Mat) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let mut first = true;
        for v in m.row(i) {
            if !first {
                out.push(',');
            }
            first = false;
            // 17 significant digits: exact f64 round trip
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Writes the dataset as CSVs plus a manifest into `dir`; returns the
/// manifest path.
pub fn save_dataset(ds: &MultimodalDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, feat) in ds.modality_names.iter().zip(&ds.features) {
        let rel = format!("features_{name}.csv");
        write_csv_matrix(&dir.join(&rel), feat)?;
        entries.push(ModalityEntry { name: name.clone(), path: rel });
    }
    let labels_rel = "labels.csv".to_string();
    {
        let mut out = String::new();
        for &y in &ds.labels {
            out.push_str(&y.to_string());
            out.push('\n');
        }
        let mut f = std::fs::File::create(dir.join(&labels_rel))?;
        f.write_all(out.as_bytes())?;
    }
    let manifest = DatasetManifest {
        modalities: entries,
        labels_path: labels_rel,
        num_classes: ds.num_classes,
    };
    let manifest_path = dir.join("manifest.json");
    let mut f = std::fs::File::create(&manifest_path)?;
    f.write_all(serde_json::to_string_pretty(&manifest).unwrap().as_bytes())?;
    f.write_all(b"\n")?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::tests_support::small_dataset;

    #[test]
    fn small_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "1,2,3\n4,5,6\n7,8,9\n1,1,1\n").unwrap();
        std::fs::write(dir.path().join("b.csv"), "0,0,1\n0,1,0\n1,0,0\n1,1,0\n").unwrap();
        std::fs::write(dir.path().join("y.csv"), "0\n1\n0\n1\n").unwrap();
        let manifest = DatasetManifest {
            modalities: vec![
                ModalityEntry { name: "a".into(), path: "a.csv".into() },
                ModalityEntry { name: "b".into(), path: "b.csv".into() },
            ],
            labels_path: "y.csv".into(),
            num_classes: 2,
        };
        let mp = dir.path().join("manifest.json");
        std::fs::write(&mp, serde_json::to_string(&manifest).unwrap()).unwrap();
        let ds = load_dataset(&mp).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.num_modalities(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.features[0].at(1, 2), 6.0);
    }

    #[test]
    fn row_mismatch_is_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "1,2\n3,4\n5,6\n7,8\n").unwrap();
        std::fs::write(dir.path().join("b.csv"), "1\n2\n3\n4\n5\n").unwrap();
        std::fs::write(dir.path().join("y.csv"), "0\n1\n0\n1\n").unwrap();
        let manifest = DatasetManifest {
            modalities: vec![
                ModalityEntry { name: "a".into(), path: "a.csv".into() },
                ModalityEntry { name: "b".into(), path: "b.csv".into() },
            ],
            labels_path: "y.csv".into(),
            num_classes: 2,
        };
        let mp = dir.path().join("manifest.json");
        std::fs::write(&mp, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(load_dataset(&mp).is_err());
    }

    #[test]
    fn non_numeric_cell_is_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "1,x\n3,4\n1,2\n3,4\n").unwrap();
        std::fs::write(dir.path().join("y.csv"), "0\n1\n0\n1\n").unwrap();
        let manifest = DatasetManifest {
            modalities: vec![ModalityEntry { name: "a".into(), path: "a.csv".into() }],
            labels_path: "y.csv".into(),
            num_classes: 2,
        };
        let mp = dir.path().join("manifest.json");
        std::fs::write(&mp, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(load_dataset(&mp).is_err());
    }

    #[test]
    fn label_out_of_range_is_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "1,2\n3,4\n5,6\n7,8\n").unwrap();
        std::fs::write(dir.path().join("y.csv"), "0\n1\n2\n1\n").unwrap();
        let manifest = DatasetManifest {
            modalities: vec![ModalityEntry { name: "a".into(), path: "a.csv".into() }],
            labels_path: "y.csv".into(),
            num_classes: 2,
        };
        let mp = dir.path().join("manifest.json");
        std::fs::write(&mp, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert!(load_dataset(&mp).is_err());
    }

    #[test]
    fn write_then_load_is_bit_identical() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let mp = save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&mp).unwrap();
        for m in 0..ds.num_modalities() {
            assert_eq!(ds.features[m], back.features[m]); // bit-exact
        }
        assert_eq!(ds.labels, back.labels);
    }
}
