use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// Reads `label,f0,f1,…` rows. Labels are arbitrary strings, remapped onto
/// `0..K` in order of first appearance.
pub fn read_csv_dataset(path: &Path) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(err(1, "file is empty".into())),
        Some(r) => r.map_err(|e| err(line_of(&e), e.to_string()))?,
    };
    if header.get(0).map(str::trim) != Some("label") {
        return Err(err(1, "header must start with `label`".into()));
    }
    let dim = header.len() - 1;
    for (i, name) in header.iter().skip(1).enumerate() {
        if name.trim() != format!("f{i}") {
            return Err(err(1, format!("header column {} should be `f{i}`, found `{name}`", i + 1)));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for record in records {
        let record = record.map_err(|e| err(line_of(&e), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if record.len() != dim + 1 {
            return Err(err(line, format!("expected {} fields, found {}", dim + 1, record.len())));
        }
        let label = record[0].trim();
        let id = match names.iter().position(|n| n == label) {
            Some(id) => id,
            None => {
                names.push(label.to_string());
                names.len() - 1
            }
        };
        labels.push(id);
        for (col, cell) in record.iter().enumerate().skip(1) {
            let v = cell
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(line, format!("column {col}: `{cell}` is not a finite number")))?;
            features.push(v);
        }
    }
    if labels.is_empty() {
        return Err(err(1, "file has a header but no samples".into()));
    }
    LabeledDataset::new(features, dim, labels, names)
}

fn line_of(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

/// Writes the dataset in the format [`read_csv_dataset`] accepts, using the
/// class names as labels and shortest round-trip float formatting.
pub fn write_csv_dataset(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::from("label");
    for i in 0..ds.dim() {
        line.push_str(&format!(",f{i}"));
    }
    let mut out = line + "\n";
    for i in 0..ds.len() {
        out.push_str(&ds.class_names()[ds.labels()[i]]);
        for v in ds.sample(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_clusters;

    fn file(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn two_rows() {
        let (_d, p) = file("label,f0,f1\na,1,2\nb,3,4\n");
        let ds = read_csv_dataset(&p).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sample(1), &[3.0, 4.0]);
    }

    #[test]
    fn first_appearance_remap() {
        let (_d, p) = file("label,f0\n7,0\n7,0\n3,0\n");
        let ds = read_csv_dataset(&p).unwrap();
        assert_eq!(ds.labels(), &[0, 0, 1]);
        assert_eq!(ds.class_names(), &["7".to_string(), "3".to_string()]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let (_d, p) = file("label,f0,f1\na,1,2\nb,3\n");
        assert!(matches!(read_csv_dataset(&p), Err(Error::Csv { line: 3, .. })));
        let (_d, p) = file("label,f0\na,1\nb,x\n");
        let e = read_csv_dataset(&p).unwrap_err();
        assert!(matches!(e, Error::Csv { line: 3, .. }), "{e}");
        let (_d, p) = file("");
        assert!(matches!(read_csv_dataset(&p), Err(Error::Csv { line: 1, .. })));
    }

    #[test]
    fn round_trip() {
        let ds = gen_gaussian_clusters(3, 4, 5, 0.7, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        write_csv_dataset(&ds, &p).unwrap();
        let back = read_csv_dataset(&p).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for (a, b) in back.features().iter().zip(ds.features()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
