//! File formats.
//!
//! `TNSR v1` binary layout (all integers little-endian):
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 4            | magic `54 4E 53 52` ("TNSR")             |
//! | 2            | u16 version = 1                          |
//! | 2            | u16 order N                              |
//! | 8 · N        | u64 dimensions                           |
//! | 8 · ∏ I_n    | f64 values, row-major (last index fastest) |
//!
//! Matrices may also be exchanged as headerless CSV (one row per line).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, KruskalFactors, Matrix};

pub const TNSR_MAGIC: [u8; 4] = *b"TNSR";
pub const TNSR_VERSION: u16 = 1;

pub fn encode_tnsr(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.order() + 8 * t.len());
    out.extend_from_slice(&TNSR_MAGIC);
    out.extend_from_slice(&TNSR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.order() as u16).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tnsr(bytes: &[u8]) -> Result<DenseTensor> {
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(4)? != TNSR_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != TNSR_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let order = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(order);
    for _ in 0..order {
        let d = u64::from_le_bytes(take(8)?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| Error::Format("dimension overflow".into()))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("size overflow".into()))?;
    let body = take(count.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !cur.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", cur.len())));
    }
    DenseTensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_tnsr(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_tnsr(t))?;
    Ok(())
}

pub fn read_tnsr(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_tnsr(&buf)
}

pub fn matrix_to_tensor(m: &Matrix) -> DenseTensor {
    DenseTensor::new(vec![m.rows(), m.cols()], m.data().to_vec())
        .expect("matrix shapes are valid tensor shapes")
}

pub fn tensor_to_matrix(t: &DenseTensor) -> Result<Matrix> {
    match t.shape() {
        &[rows, cols] => Matrix::new(rows, cols, t.data().to_vec()),
        s => Err(Error::Format(format!("expected an order-2 tensor, got shape {s:?}"))),
    }
}

/// Writes factors as `<prefix>1.tnsr`, `<prefix>2.tnsr`, ... (order-2 tensors).
pub fn write_factors(dir: impl AsRef<Path>, prefix: &str, f: &KruskalFactors) -> Result<()> {
    for (n, m) in f.factors().iter().enumerate() {
        write_tnsr(dir.as_ref().join(format!("{prefix}{}.tnsr", n + 1)), &matrix_to_tensor(m))?;
    }
    Ok(())
}

pub fn read_factors(dir: impl AsRef<Path>, prefix: &str, order: usize) -> Result<KruskalFactors> {
    let factors = (1..=order)
        .map(|n| tensor_to_matrix(&read_tnsr(dir.as_ref().join(format!("{prefix}{n}.tnsr")))?))
        .collect::<Result<Vec<_>>>()?;
    KruskalFactors::new(factors)
}

pub fn parse_csv_matrix(text: &str) -> Result<Matrix> {
    let rows = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(ln, line)| {
            line.split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        Error::Format(format!("line {}: {e}: {:?}", ln + 1, s.trim()))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::Format("empty matrix file".into()));
    }
    Matrix::from_rows(&rows).map_err(|e| Error::Format(e.to_string()))
}

pub fn format_csv_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    parse_csv_matrix(&fs::read_to_string(path)?)
}

pub fn write_csv_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    fs::write(path, format_csv_matrix(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = DenseTensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let b = encode_tnsr(&t);
        assert_eq!(&b[..4], &[0x54, 0x4E, 0x53, 0x52]);
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..8], &[2, 0]);
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..24], &1u64.to_le_bytes());
        assert_eq!(&b[24..32], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 40);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let t = DenseTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let good = encode_tnsr(&t);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tnsr(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_tnsr(&bad), Err(Error::Format(_))));
        assert!(decode_tnsr(&good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(decode_tnsr(&long).is_err());
    }

    #[test]
    fn csv_parse() {
        let m = parse_csv_matrix("1, 2,3\n4,5,6\n").unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m[(1, 2)], 6.0);
        assert!(parse_csv_matrix("1,2\n3\n").is_err());
        assert!(parse_csv_matrix("1,x\n").is_err());
        let back = parse_csv_matrix(&format_csv_matrix(&m)).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn tnsr_round_trip(shape in prop::collection::vec(1usize..4, 1..4), seed in any::<u32>()) {
            let t = DenseTensor::from_fn(&shape, |i| {
                i.iter().fold(seed as f64, |a, &x| a * 0.37 + x as f64 - 1.25)
            }).unwrap();
            prop_assert_eq!(decode_tnsr(&encode_tnsr(&t)).unwrap(), t);
        }
    }
}
