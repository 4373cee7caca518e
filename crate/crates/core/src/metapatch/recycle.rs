//! Recycle table: `device_id,theta_0,...,theta_{K-1}`, one row per device.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::MetaPatchVector;

/// `(device id, code values)`, lossless.
pub fn export_patch_row(code: &MetaPatchVector) -> (usize, Vec<f64>) {
    (code.device, code.values.clone())
}

pub fn encode_recycle(codes: &[MetaPatchVector], code_dim: usize) -> String {
    let mut s = String::from("device_id");
    for k in 0..code_dim {
        let _ = write!(s, ",theta_{k}");
    }
    s.push('\n');
    for c in codes {
        let _ = write!(s, "{}", c.device);
        for v in &c.values {
            let _ = write!(s, ",{v:e}");
        }
        s.push('\n');
    }
    s
}

/// Parses a recycle table. Extra leading columns named in `skip` (for
/// example a category column) are ignored.
pub fn decode_recycle(text: &str, path: &Path, skip: &[&str]) -> Result<Vec<MetaPatchVector>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty table".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"device_id") {
        return Err(err(1, "first column must be device_id".into()));
    }
    let mut k = 1;
    while k < cols.len() && skip.contains(&cols[k]) {
        k += 1;
    }
    let first_theta = k;
    for (j, c) in cols[first_theta..].iter().enumerate() {
        if *c != format!("theta_{j}") {
            return Err(err(1, format!("unexpected column {c:?}")));
        }
    }
    let mut out = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(err(no, format!("{} fields, header has {}", f.len(), cols.len())));
        }
        let device = f[0].parse().map_err(|_| err(no, format!("bad device id {:?}", f[0])))?;
        let values = f[first_theta..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| err(no, format!("bad value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(MetaPatchVector { device, values });
    }
    Ok(out)
}

pub fn write_recycle(path: &Path, codes: &[MetaPatchVector], code_dim: usize) -> Result<()> {
    std::fs::write(path, encode_recycle(codes, code_dim)).map_err(|e| Error::io(path, e))
}

pub fn read_recycle(path: &Path) -> Result<Vec<MetaPatchVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_recycle(&text, path, &["category"])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let codes = vec![
            MetaPatchVector { device: 3, values: vec![0.1, -2.5e-300, 1.0 / 3.0] },
            MetaPatchVector { device: 7, values: vec![0.0, f64::MIN_POSITIVE, -7.0] },
        ];
        let text = encode_recycle(&codes, 3);
        assert!(text.starts_with("device_id,theta_0,theta_1,theta_2\n"));
        assert_eq!(decode_recycle(&text, Path::new("t"), &[]).unwrap(), codes);
    }

    #[test]
    fn row_shape() {
        let c = MetaPatchVector::zeros(4, 32);
        let text = encode_recycle(std::slice::from_ref(&c), 32);
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row.split(',').count(), 33);
        assert_eq!(export_patch_row(&c), (4, vec![0.0; 32]));
    }

    #[test]
    fn ragged_row_rejected() {
        let text = "device_id,theta_0,theta_1\n1,0.5\n";
        assert!(matches!(decode_recycle(text, Path::new("t"), &[]), Err(Error::Parse { line: 2, .. })));
    }
}
