//! Dataset loaders for CSV tables and IDX image/label pairs.
//!
//! Both produce features in `[0, 1]`: CSV columns are min-max rescaled,
//! IDX bytes are divided by 255.

use std::fs;
use std::path::Path;

use mialab_core::data::{rescale_columns, Dataset, Domain};

use crate::error::{CliError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Format(format!("{}: {msg}", path.display()))
}

fn finish(
    path: &Path,
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let observed = labels.iter().max().map_or(0, |&m| m + 1);
    let k = num_classes.unwrap_or(observed);
    if observed > k {
        return Err(format_err(path, format!("label {} out of range for {k} classes", observed - 1)));
    }
    Ok(Dataset::new(features, labels, dim, k.max(2), Domain::UNIT)?)
}

/// Header row required; the column named `label` holds non-negative integer
/// class ids, every other column is a numeric feature.
pub fn ingest_csv(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => format_err(path, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| format_err(path, e))?.clone();
    let label_col = header
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| format_err(path, "line 1: no column named \"label\""))?;
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(format_err(path, "line 1: no feature columns"));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(format_err(
                path,
                format!("line {line}: {} fields, header has {}", record.len(), header.len()),
            ));
        }
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if col == label_col {
                let y: usize = field.parse().map_err(|_| {
                    format_err(path, format!("line {line}: label {field:?} is not a non-negative integer"))
                })?;
                if let Some(k) = num_classes.filter(|&k| y >= k) {
                    return Err(format_err(path, format!("line {line}: label {y} out of range for {k} classes")));
                }
                labels.push(y);
            } else {
                let v: f64 = field
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| {
                        format_err(path, format!("line {line}, column {}: {field:?} is not a finite number", col + 1))
                    })?;
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    rescale_columns(&mut features, dim);
    finish(path, features, labels, dim, num_classes)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            format_err(path, format!("truncated header: need 4 bytes at byte {offset}, file has {}", bytes.len()))
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(format_err(path, format!("bad magic {magic:#010x} at byte 0, expected {expected:#010x}")));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, expected: usize, path: &Path) -> Result<&'a [u8]> {
    let actual = bytes.len().saturating_sub(start);
    if actual != expected {
        return Err(format_err(
            path,
            format!("payload starting at byte {start}: expected {expected} bytes, found {actual}"),
        ));
    }
    Ok(&bytes[start..])
}

/// Parses an IDX `u8` image tensor: magic, then `n × rows × cols`.
/// Returns `(n, rows * cols, pixels)`.
pub fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(format_err(path, "images have zero pixels"));
    }
    Ok((n, dim, payload(bytes, 16, n * dim, path)?))
}

pub fn parse_idx_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    payload(bytes, 8, n, path)
}

pub fn ingest_idx_pair(images: &Path, labels: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let img_bytes = fs::read(images).map_err(|e| CliError::io(images, e))?;
    let lbl_bytes = fs::read(labels).map_err(|e| CliError::io(labels, e))?;
    let (n, dim, pixels) = parse_idx_images(&img_bytes, images)?;
    let raw_labels = parse_idx_labels(&lbl_bytes, labels)?;
    if raw_labels.len() != n {
        return Err(format_err(
            labels,
            format!("{} labels for {n} images in {}", raw_labels.len(), images.display()),
        ));
    }
    if let Some(k) = num_classes {
        if let Some(i) = raw_labels.iter().position(|&y| usize::from(y) >= k) {
            return Err(format_err(
                labels,
                format!("byte {}: label {} out of range for {k} classes", 8 + i, raw_labels[i]),
            ));
        }
    }
    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels_vec = raw_labels.iter().map(|&y| usize::from(y)).collect();
    finish(labels, features, labels_vec, dim, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    fn idx_images(n: u32, r: u32, c: u32, body: usize) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3];
        for v in [n, r, c] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0..body).map(|i| (i % 256) as u8));
        b
    }

    #[test]
    fn three_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", b"a,label,b\n1.0,0,5\n2.0,1,5\n3.0,2,6\n");
        let ds = ingest_csv(&p, None).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_classes()), (3, 2, 3));
        assert_eq!(ds.features(0), &[0.0, 0.0]);
        assert_eq!(ds.features(1), &[0.5, 0.0]);
        assert_eq!(ds.features(2), &[1.0, 1.0]);
        assert_eq!(ds.labels(), &[0, 1, 2]);
    }

    #[test]
    fn csv_errors_cite_lines() {
        let dir = tempfile::tempdir().unwrap();
        let cases: [(&[u8], &str); 5] = [
            (b"a,b\n1,2\n", "label"),
            (b"a,label\n1,0\n2\n", "line 3"),
            (b"a,label\n1,0\nx,1\n", "line 3"),
            (b"a,label\n1,-1\n", "line 2"),
            (b"a,label\n1,0\n1,7\n", "out of range"),
        ];
        for (i, (body, needle)) in cases.iter().enumerate() {
            let p = write(dir.path(), &format!("{i}.csv"), body);
            let err = ingest_csv(&p, Some(3)).unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn idx_pair_layout() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i.idx", &idx_images(10, 4, 4, 160));
        let mut lbl = vec![0, 0, 8, 1, 0, 0, 0, 10];
        lbl.extend((0..10u8).map(|i| i % 3));
        let lbl = write(dir.path(), "l.idx", &lbl);
        let ds = ingest_idx_pair(&img, &lbl, None).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_classes()), (10, 16, 3));
        assert_eq!(ds.features(0)[1], 1.0 / 255.0);
        assert!(ds.domain().contains(ds.features(9)));
    }

    #[test]
    fn idx_errors() {
        let p = Path::new("x.idx");
        let err = parse_idx_images(&idx_images(10, 4, 4, 150), p).unwrap_err().to_string();
        assert!(err.contains("expected 160 bytes, found 150"), "{err}");
        let mut bad = idx_images(1, 1, 1, 1);
        bad[3] = 1;
        assert!(parse_idx_images(&bad, p).unwrap_err().to_string().contains("bad magic 0x00000801"));
        assert!(parse_idx_images(&[0, 0, 8, 3, 0, 0], p).unwrap_err().to_string().contains("byte 4"));
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 2, 1], p).is_err());
    }
}
